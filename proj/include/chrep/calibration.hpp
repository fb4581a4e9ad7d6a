#ifndef CHREP_CALIBRATION_HPP
#define CHREP_CALIBRATION_HPP

#include "chrep/cohort.hpp"
#include "chrep/encoders.hpp"
#include "chrep/objectives.hpp"
#include "chrep/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chrep {

struct CalibConfig {
    std::size_t k_gallery = 50;
    double tau_t = 0.1;
    double lambda_delta = 0.1;
    std::size_t hidden = 256;
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const CalibConfig& c);
void from_json(const nlohmann::json& j, CalibConfig& c);

struct SpotKey {
    std::string slide_id;
    std::string spot_id;
    friend bool operator==(const SpotKey&, const SpotKey&) = default;
};

/// Frozen image features of the training spots paired with their
/// standardized expression. Rows are ordered by slide, then spot.
struct GalleryBank {
    std::string fold_id;
    Tensor2 z;       ///< N_tr x d_embed, raw F_H
    Tensor2 z_unit;  ///< rows of z L2-normalized (ε-guarded)
    Tensor2 g_std;   ///< N_tr x G
    std::vector<SpotKey> origin;

    std::size_t size() const { return origin.size(); }
    std::optional<std::size_t> find(const SpotKey& key) const;
};

/// Rows divided by max(||row||, 1e-8).
Tensor2 l2_normalize_rows(const Tensor2& m);

GalleryBank build_gallery(const ModelParams& params, std::span<const PreparedSlide> train, std::string fold_id = {});
GalleryBank build_gallery(const ModelParams& params, const LosoFold& fold, const Cohort& cohort,
                          double scale = kDefaultLibraryScale);

struct Neighbors {
    std::vector<std::size_t> index;  ///< bank rows, best first
    std::vector<double> sim;         ///< cosine similarities, same order
};

/// Top-k bank rows by cosine similarity (desc), ties by row index (asc),
/// after removing `exclude`. Returns min(k, candidates) entries.
Neighbors retrieve(std::span<const double> z_q, const GalleryBank& bank, std::size_t k,
                   std::optional<std::size_t> exclude = std::nullopt);
Neighbors retrieve(std::span<const double> z_q, const GalleryBank& bank, std::size_t k, const SpotKey& exclude);

/// Softmax of sims / tau_t with max subtraction.
std::vector<double> neighbor_weights(std::span<const double> sims, double tau_t);

struct EstimateResult {
    std::vector<double> g;  ///< ĝ^(E), length G
    Neighbors neighbors;
    std::vector<double> weights;
};

/// Similarity-weighted mean of the neighbors' standardized expression.
EstimateResult estimate(std::span<const double> z_q, const GalleryBank& bank, const CalibConfig& cfg,
                        std::optional<std::size_t> exclude = std::nullopt);

/// Estimates for many queries. With leave_self_out, query i is bank row i
/// and is removed from its own candidate set (k capped at N_tr - 1).
struct BatchEstimate {
    Tensor2 g;                            ///< N x G
    std::vector<std::vector<std::size_t>> neighbors;
};
BatchEstimate estimate_all(const Tensor2& queries, const GalleryBank& bank, const CalibConfig& cfg,
                           bool leave_self_out);

/// Small residual MLP d_embed -> hidden -> G with a zero-initialized output layer.
struct CorrectionNet {
    Mlp mlp;

    static CorrectionNet init(std::size_t d_embed, std::size_t hidden, std::size_t g, std::uint64_t seed);
    Tensor2 forward(const Tensor2& z) const;
    std::vector<double> forward(std::span<const double> z) const;

    TensorArchive to_archive() const;
    static CorrectionNet from_archive(const TensorArchive& archive);
};

struct CalibEpoch {
    std::size_t epoch = 0;
    double reg = 0.0;
    double delta = 0.0;  ///< mean ||Δ||² over the epoch's batches
    double total = 0.0;
};

struct CorrectionResult {
    CorrectionNet net;
    std::vector<CalibEpoch> trace;
};

/// Trains only the correction net on pred = base + Δ(z) with
/// L_reg(pred, target) + λ_Δ·mean ||Δ||². `base` is the anchor for each
/// training row (self-excluded estimates, or regression-head output).
CorrectionResult train_correction(const Tensor2& z, const Tensor2& base, const Tensor2& target,
                                  const CalibConfig& cfg, const LossWeights& reg_form);

/// Fold-level calibration with frozen stage-1 params: self-excluded gallery
/// estimates for every training spot, then correction training. Throws
/// ContractError if the stage-1 checksum changes.
CorrectionResult train_correction(const ModelParams& params, const GalleryBank& bank, const CalibConfig& cfg,
                                  const LossWeights& reg_form);

/// ĝ = ĝ^(E) + Δ(z_q). Test queries are never excluded.
std::vector<double> predict(std::span<const double> z_q, const GalleryBank& bank, const CorrectionNet& net,
                            const CalibConfig& cfg);
Tensor2 predict_all(const Tensor2& queries, const GalleryBank& bank, const CorrectionNet& net, const CalibConfig& cfg);

/// Post-hoc calibration designs compared in the ablation.
enum class CalibVariant { EstimateOnly, CorrectionOnly, NoConstraint, Full };

const char* to_string(CalibVariant v);
std::optional<CalibVariant> calib_variant_from_string(const std::string& s);

struct CalibrationOutput {
    Tensor2 predictions;  ///< N_test x G
    Tensor2 delta;        ///< N_test x G correction outputs (zero when unused)
    double train_delta_sq = 0.0;  ///< mean ||Δ||² over training spots after training
    std::vector<CalibEpoch> trace;
    std::optional<CorrectionNet> net;
};

/// A fitted calibration design. Holds nothing derived from held-out data.
struct CalibrationModel {
    CalibVariant variant = CalibVariant::Full;
    CalibConfig cfg;  ///< effective settings (λ_Δ forced to 0 where the design has no constraint)
    std::optional<CorrectionNet> net;
    double train_delta_sq = 0.0;  ///< mean ||Δ||² over training spots after training
    std::vector<CalibEpoch> trace;
};

/// Trains one calibration design from the gallery alone. Throws ContractError
/// if the stage-1 checksum changes.
CalibrationModel fit_calibration(CalibVariant variant, const ModelParams& params, const GalleryBank& bank,
                                 const CalibConfig& cfg, const LossWeights& reg_form);

/// Predictions for held-out queries `test_z` (frozen F_H of the test spots).
CalibrationOutput apply_calibration(const CalibrationModel& model, const ModelParams& params, const GalleryBank& bank,
                                    const Tensor2& test_z);

/// fit_calibration followed by apply_calibration.
CalibrationOutput run_calibration(CalibVariant variant, const ModelParams& params, const GalleryBank& bank,
                                  const Tensor2& test_z, const CalibConfig& cfg, const LossWeights& reg_form);

/// Gallery export: archive with tensors "z" and "g_std" plus <stem>.origin.csv.
void write_gallery(const GalleryBank& bank, const std::filesystem::path& path);
GalleryBank read_gallery(const std::filesystem::path& path);

} // namespace chrep

#endif
