#ifndef CHREP_METRICS_HPP
#define CHREP_METRICS_HPP

#include "chrep/tensor.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chrep {

/// Columns whose variance falls below this make the correlation undefined.
inline constexpr double kPccMinVar = 1e-12;

/// Pearson correlation across spots; nullopt when N < 2 or either column is
/// (numerically) constant.
std::optional<double> pcc_gene(std::span<const double> truth, std::span<const double> pred);

/// Gene-wise PCC for every column of an N x G pair.
std::vector<std::optional<double>> pcc_per_gene(const Tensor2& truth, const Tensor2& pred);

struct PccSetResult {
    double value = 0.0;  ///< NaN when no gene in the subset is defined
    std::size_t n_defined = 0;
    std::size_t n_excluded = 0;
};

/// Mean of the defined gene-wise correlations over `genes` (all genes when empty).
PccSetResult pcc_set(const Tensor2& truth, const Tensor2& pred, std::span<const std::size_t> genes = {});
PccSetResult pcc_set(std::span<const std::optional<double>> per_gene, std::span<const std::size_t> genes = {});

/// Top-K genes by mean log-normalized expression, ties to the lower index,
/// returned in rank order. K is clipped to G with a warning.
std::vector<std::size_t> heg_set(const Tensor2& truth_lognorm, std::size_t k);

struct ErrorMetrics {
    double mse = 0.0;
    double mae = 0.0;
};
ErrorMetrics error_metrics(const Tensor2& truth_std, const Tensor2& pred);

struct Quartiles {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    std::size_t n = 0;
};

/// Quantile with linear interpolation between order statistics (position p·(n−1)).
double quantile(std::span<const double> values, double p);
/// Five-number summary of the defined entries; nullopt when none is defined.
std::optional<Quartiles> quartiles(std::span<const std::optional<double>> values);

struct SlideQuartiles {
    std::string slide_id;
    std::optional<Quartiles> q;
};
std::vector<SlideQuartiles> slide_distribution(const std::map<std::string, std::vector<std::optional<double>>>& per_slide);
std::string slide_quartiles_csv(std::span<const SlideQuartiles> rows);

struct MetricsReport {
    std::string fold_id;
    std::size_t n_spots = 0;
    double pcc_acg = 0.0;
    std::size_t n_defined = 0;
    std::size_t n_excluded = 0;
    std::map<std::size_t, double> pcc_heg;
    double mse = 0.0;
    double mae = 0.0;
    std::vector<std::string> gene_names;
    std::vector<std::optional<double>> per_gene_pcc;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// Scores one held-out slide. truth_std and pred live in standardized space;
/// truth_lognorm is the same slide before standardization (HEG ranking only).
MetricsReport evaluate(const std::string& fold_id, const Tensor2& truth_std, const Tensor2& pred,
                       const Tensor2& truth_lognorm, std::span<const std::string> gene_names,
                       std::span<const std::size_t> heg_ks);

/// Rows: slide_id,gene,pcc,defined
std::string per_gene_pcc_csv(const std::string& slide_id, const MetricsReport& r);

} // namespace chrep

#endif
