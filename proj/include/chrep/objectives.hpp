#ifndef CHREP_OBJECTIVES_HPP
#define CHREP_OBJECTIVES_HPP

#include "chrep/autodiff.hpp"
#include "chrep/cohort.hpp"
#include "chrep/encoders.hpp"
#include "chrep/optimizer.hpp"
#include "chrep/topology.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <vector>

namespace chrep {

struct LossWeights {
    double lambda_mae = 0.5;
    double lambda_pcc = 0.5;
    double lambda_con = 1.0;
    double lambda_reg = 1.0;
    double lambda_spa = 0.1;
    std::vector<double> alpha{1.0, 0.5};  ///< one weight per hop, length h_hop
    std::size_t k_knn = 6;

    std::size_t h_hop() const { return alpha.size(); }
    void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Genes whose within-batch variance falls below this are left out of the PCC term.
inline constexpr double kPccAdmissibleVar = 1e-10;

/// MSE + λ_mae·MAE + λ_pcc·(1 − mean gene-wise PCC across the batch).
///
/// Genes with target or prediction variance below kPccAdmissibleVar are
/// excluded from the mean. With no admissible gene the PCC term is the
/// constant λ_pcc. With fewer than 2 rows the PCC term is skipped and a
/// warning is recorded.
ad::Var loss_reg(ad::Var pred, ad::Var target, double lambda_mae, double lambda_pcc);

/// Symmetric InfoNCE over cosine similarities of unit-norm rows, temperature tau (1x1).
ad::Var loss_contrastive(ad::Var p_m, ad::Var p_g, ad::Var tau);

/// ||S̃ − Ã||_F² where S is the cosine-similarity matrix of F_G rows and A the
/// topology prior; both get a zeroed diagonal and unit Frobenius norm (a
/// matrix with norm below 1e-12 becomes zero).
ad::Var loss_spa(ad::Var f_g, const TopoPrior& prior);

/// Zero-diagonal, unit-Frobenius version of a square matrix (value-level).
Tensor2 normalize_similarity(const Tensor2& m);

/// One single-slide mini-batch.
struct Batch {
    Tensor2 feats;        ///< B x D_img
    Tensor2 coords;       ///< B x 2, platform units (graph construction)
    Tensor2 coords_unit;  ///< B x 2, encoder input
    Tensor2 g_std;        ///< B x G
};

Batch make_batch(const PreparedSlide& slide, std::span<const std::size_t> rows);

/// Weighted objective and its parts. Terms with zero weight are not evaluated
/// and stay as invalid Vars.
struct LossTerms {
    ad::Var reg;
    ad::Var con;
    ad::Var spa;
    ad::Var total;
};

/// λ_con·L_con + λ_reg·L_reg + λ_spa·L_spa for one batch. The prior is built
/// from batch.coords when not supplied.
LossTerms total_loss(ad::Graph& g, const Batch& batch, const ModelVars& m, const LossWeights& w,
                     const TopoPrior* prior = nullptr);

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Per-epoch means over batches. Unevaluated terms are reported as 0.
struct EpochTrace {
    std::size_t epoch = 0;
    double reg = 0.0;
    double con = 0.0;
    double spa = 0.0;
    double total = 0.0;
};

struct Stage1Result {
    ModelParams params;
    std::vector<EpochTrace> trace;
};

/// Mini-batch Adam on the total objective. Every batch is drawn from a single
/// training slide; batch composition and order come from cfg.seed.
Stage1Result train_stage1(std::span<const PreparedSlide> train, const EncoderConfig& enc, const LossWeights& w,
                          const TrainConfig& cfg);

/// Fold-level entry point: standardizes the fold's training slides and trains.
Stage1Result train_stage1(const LosoFold& fold, const Cohort& cohort, const EncoderConfig& enc, const LossWeights& w,
                          const TrainConfig& cfg, double scale = kDefaultLibraryScale);

std::string trace_csv(std::span<const EpochTrace> trace);

} // namespace chrep

#endif
