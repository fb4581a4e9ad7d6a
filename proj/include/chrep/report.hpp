#ifndef CHREP_REPORT_HPP
#define CHREP_REPORT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace chrep {

/// One cell read back from an output tree.
struct CellRecord {
    std::string variant;
    std::string fold;
    std::uint64_t replicate = 0;
    bool ok = false;
    std::string error_kind;
    std::string error;
    std::map<std::string, double> values;  ///< pcc_acg, pcc_heg@K, mse, mae, delta_sq_train, delta_sq_test
    std::vector<std::optional<double>> per_gene_pcc;
};

/// Scans <out>/<variant>/<fold>/<replicate>/{metrics.json,error.json}. Cells come
/// back sorted by (variant, fold, replicate).
std::vector<CellRecord> collect_cells(const std::filesystem::path& out);

struct AggregateRow {
    std::string variant;
    std::string metric;
    double mean = 0.0;            ///< mean over folds of the per-fold (replicate-averaged) values
    double std_over_folds = 0.0;  ///< sample std of the per-fold values
    double std_over_seeds = 0.0;  ///< sample std of the per-replicate (fold-averaged) values
    std::size_t n_folds = 0;
    std::size_t n_seeds = 0;
    std::size_t n_cells = 0;
    std::size_t n_failed = 0;
};

std::vector<AggregateRow> aggregate(const std::vector<CellRecord>& cells);
std::optional<AggregateRow> find_row(const std::vector<AggregateRow>& rows, const std::string& variant,
                                     const std::string& metric);

/// Writes <out>/summary.md, <out>/summary.csv and <out>/<variant>/slide_quartiles.csv.
/// Throws ConfigError when the directory holds no cells.
std::vector<AggregateRow> write_summary(const std::filesystem::path& out);

} // namespace chrep

#endif
