#ifndef CHREP_COHORT_HPP
#define CHREP_COHORT_HPP

#include "chrep/tensor.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chrep {

inline constexpr double kLibraryEps = 1e-12;
inline constexpr double kStandardizeEps = 1e-8;
inline constexpr double kDefaultLibraryScale = 1e4;

/// One capture location.
struct SpotRecord {
    std::string slide_id;
    std::string spot_id;
    std::array<double, 2> coord{};  ///< platform units
    std::vector<double> feat;       ///< image features, length D_img
    std::vector<double> expr_raw;   ///< raw counts, length G_all
};

struct Cohort {
    std::string name;
    std::vector<std::string> gene_names;
    std::vector<std::size_t> hvg_index;  ///< sorted ascending
    std::map<std::string, std::vector<SpotRecord>> slides;

    std::size_t n_genes() const { return gene_names.size(); }
    std::size_t n_hvg() const { return hvg_index.size(); }
    std::size_t d_img() const;
    std::size_t total_spots() const;
    std::vector<std::string> slide_ids() const;
    const std::vector<SpotRecord>& slide(const std::string& id) const;

    /// Checks every documented invariant; throws InvalidInput on the first violation.
    void validate() const;
};

/// log(1 + scale * x / max(total, 1e-12)) per gene.
std::vector<double> lognorm(std::span<const double> expr_raw, double scale = kDefaultLibraryScale);

/// Picks the n_hvg genes with the largest population variance of log-normalized
/// expression over every spot of every slide. Ties go to the lower index; the
/// result is sorted ascending and stored in cohort.hvg_index.
std::vector<std::size_t> select_hvg(Cohort& cohort, std::size_t n_hvg, double scale = kDefaultLibraryScale);

/// Variance ranking used by select_hvg, exposed for direct testing.
std::vector<std::size_t> top_variance_genes(std::span<const double> variances, std::size_t n_hvg);

/// Per-gene z-scoring with statistics fitted on training slides only.
struct Standardizer {
    std::vector<double> mu;
    std::vector<double> sigma;
    double epsilon = kStandardizeEps;

    std::size_t size() const { return mu.size(); }
    std::vector<double> apply(std::span<const double> g) const;
    std::vector<double> invert(std::span<const double> z) const;
    Tensor2 apply(const Tensor2& g) const;
    Tensor2 invert(const Tensor2& z) const;
};

std::vector<double> standardize(std::span<const double> g, const Standardizer& s);

/// Mean and population standard deviation of log-normalized HVG expression over
/// all spots of the listed slides.
Standardizer fit_standardizer(const Cohort& cohort, std::span<const std::string> train_slides,
                              double scale = kDefaultLibraryScale);

/// Same statistics from already log-normalized matrices (rows are spots).
Standardizer fit_standardizer(std::span<const Tensor2> expr_log);

struct LosoFold {
    std::vector<std::string> train_slides;
    std::string test_slide;
    Standardizer standardizer;
};

/// One fold per slide, in slide-id order.
std::vector<LosoFold> make_folds(const Cohort& cohort, double scale = kDefaultLibraryScale);

/// Matrix form of one slide, restricted to the cohort's HVG set.
struct SlideData {
    std::string slide_id;
    std::vector<std::string> spot_ids;
    Tensor2 feats;        ///< N x D_img
    Tensor2 coords;       ///< N x 2, platform units
    Tensor2 coords_unit;  ///< N x 2, min-max scaled to [0,1] within the slide
    Tensor2 expr_log;     ///< N x G, log-normalized HVG expression

    std::size_t n_spots() const { return spot_ids.size(); }
};

SlideData slide_data(const Cohort& cohort, const std::string& slide_id, double scale = kDefaultLibraryScale);

/// A slide with its expression standardized by a fold's Standardizer.
struct PreparedSlide {
    SlideData data;
    Tensor2 g_std;  ///< N x G
};

std::vector<PreparedSlide> prepare_slides(const Cohort& cohort, std::span<const std::string> slide_ids,
                                          const Standardizer& standardizer, double scale = kDefaultLibraryScale);

/// Min-max scaling of each coordinate axis to [0,1]; a degenerate axis maps to 0.5.
Tensor2 unit_coords(const Tensor2& coords);

// ---------------------------------------------------------------------------
// On-disk cohort directory:
//   manifest.json              {name, gene_names, slides, d_img, [hvg_index]}
//   <slide>/expr.csv           spot_id,<gene names...>   raw counts
//   <slide>/coords.csv         spot_id,x,y
//   <slide>/feats.csv          spot_id,f0,...,f{D-1}
// ---------------------------------------------------------------------------

struct CohortManifest {
    std::string name;
    std::vector<std::string> gene_names;
    std::vector<std::string> slides;
    std::size_t d_img = 0;
    std::optional<std::vector<std::size_t>> hvg_index;
};

/// Records every file opened by a CohortStore, tagged with the current phase.
class AccessLog {
public:
    struct Entry {
        std::string phase;
        std::filesystem::path path;
    };

    void set_phase(std::string phase);
    void record(const std::filesystem::path& path);
    std::vector<Entry> entries() const;

private:
    mutable std::mutex mu_;
    std::string phase_;
    std::vector<Entry> entries_;
};

class CohortStore {
public:
    explicit CohortStore(std::filesystem::path root, AccessLog* log = nullptr);

    const CohortManifest& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path slide_dir(const std::string& slide_id) const { return root_ / slide_id; }

    std::vector<SpotRecord> load_slide(const std::string& slide_id) const;
    /// Cohort holding only the listed slides (HVG index copied from the manifest if present).
    Cohort load(std::span<const std::string> slide_ids) const;
    Cohort load_all() const;

private:
    std::string read_file(const std::filesystem::path& p) const;

    std::filesystem::path root_;
    AccessLog* log_;
    CohortManifest manifest_;
};

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

// Small CSV helpers shared with the report writers.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string format_double(double v);

} // namespace chrep

#endif
