#ifndef CHREP_EXPERIMENT_HPP
#define CHREP_EXPERIMENT_HPP

#include "chrep/calibration.hpp"
#include "chrep/cohort.hpp"
#include "chrep/encoders.hpp"
#include "chrep/metrics.hpp"
#include "chrep/objectives.hpp"
#include "chrep/synth.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace chrep {

/// Which loss terms stage-1 training keeps.
struct ObjectiveVariant {
    std::string name;
    bool topology = true;
    bool regression = true;
    bool contrastive = true;

    /// Copy of `w` with the dropped terms' weights set to exactly 0.
    LossWeights apply(LossWeights w) const;
};

/// One row of the ablation grid: an objective paired with a calibration design.
struct Variant {
    std::string name;
    ObjectiveVariant objective;
    CalibVariant calibration = CalibVariant::Full;
};

/// Known names: full, cal_estimate_only, cal_correction_only, cal_no_constraint,
/// obj_reg_con, obj_topo_reg, obj_con_topo, obj_reg_only.
Variant variant_from_name(const std::string& name);
std::vector<std::string> all_variant_names();

struct ExperimentConfig {
    std::optional<std::filesystem::path> cohort;  ///< cohort directory
    std::optional<SynthConfig> synth;             ///< generated into <out>/cohort when no path is given
    std::size_t n_hvg = 0;                        ///< 0 keeps every gene
    double lognorm_scale = kDefaultLibraryScale;
    EncoderConfig encoder;  ///< d_img and g are taken from the data
    LossWeights loss;
    TrainConfig train;
    CalibConfig calibration;
    std::vector<std::string> variants = all_variant_names();
    std::uint64_t seed = 0;                 ///< root seed
    std::vector<std::uint64_t> seeds{0, 1, 2};  ///< replicate indices
    std::vector<std::size_t> heg_k{50};
    std::vector<std::string> folds;         ///< held-out slides to run; empty means all
    std::size_t threads = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Small synthetic setup used for the ablation and determinism checks:
/// 6 slides x 400 spots, G = 50, D_img = 32, four latent factors, shift 0.5, three seeds.
ExperimentConfig reference_config();

/// Seed for one (replicate, held-out slide) pair; every module stream of the
/// cell is derived from it.
std::uint64_t cell_seed(std::uint64_t root, std::uint64_t replicate, const std::string& test_slide);

struct CellResult {
    std::string variant;
    std::string fold;
    std::uint64_t replicate = 0;
    bool ok = false;
    std::string error_kind;
    std::string error;
    MetricsReport metrics;
    double train_delta_sq = 0.0;
    double test_delta_sq = 0.0;
};

struct ExperimentResult {
    std::vector<CellResult> cells;
    std::size_t n_failed() const;
    bool any_numeric_failure() const;
};

/// Runs the fold x replicate x variant grid and writes
/// <out>/<variant>/<fold>/<replicate>/{metrics.json, trace.csv, per_gene_pcc.csv, ...}
/// followed by the summary files. A failing cell is recorded and skipped.
/// When `log` is given, every cohort file read is tagged with the phase
/// "fold:<slide>:train" or "fold:<slide>:eval".
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out, AccessLog* log = nullptr);

/// Single-fold pieces used by the train / calibrate / eval subcommands.
struct FoldData {
    std::string test_slide;
    std::vector<std::string> train_slides;
    Cohort cohort;  ///< training slides only, HVG index set
    Standardizer standardizer;
    std::vector<PreparedSlide> train;
};

/// Opens the cohort named by the config (generating it when synthetic).
CohortStore open_cohort(const ExperimentConfig& cfg, const std::filesystem::path& out, AccessLog* log = nullptr);
/// HVG indices for the config; reads slide data only when a real selection is needed.
std::vector<std::size_t> resolve_hvg(const ExperimentConfig& cfg, const CohortStore& store);
FoldData load_fold(const CohortStore& store, const std::string& test_slide, std::span<const std::size_t> hvg,
                   double scale);
/// Held-out slide in the fold's standardized space.
PreparedSlide load_test_slide(const CohortStore& store, const FoldData& fold, std::span<const std::size_t> hvg,
                              double scale);

} // namespace chrep

#endif
