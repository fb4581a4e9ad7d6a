#ifndef CHREP_ENCODERS_HPP
#define CHREP_ENCODERS_HPP

#include "chrep/autodiff.hpp"
#include "chrep/serialize.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace chrep {

class Rng;

struct EncoderConfig {
    std::size_t d_img = 32;
    std::size_t d_hidden = 64;
    std::size_t d_embed = 64;
    std::size_t d_proj = 32;
    std::size_t g = 50;  ///< HVG count
    std::size_t depth = 2;
    std::uint64_t seed = 0;
    double tau_init = 0.07;

    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Dense layer y = x W (+ b). W is in x out, b is 1 x out.
struct Linear {
    Tensor2 w;
    Tensor2 b;
    bool has_bias = true;
};

/// Stack of Linear layers with relu between them and a linear output.
struct Mlp {
    std::vector<Linear> layers;
};

/// He-initialized layer: weights ~ N(0, 2 / fan_in), zero bias.
Linear make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
/// depth layers: in -> hidden -> ... -> hidden -> out. depth == 1 is a single in -> out layer.
Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth, Rng& rng);

/// Every trainable weight of the representation model.
///
/// Groups: image (f_θ), coord (e_ψ), gene (g_ω), head (h_φ), fuse, proj_m,
/// proj_g, and the log of the contrastive temperature.
struct ModelParams {
    EncoderConfig config;
    Mlp image;
    Mlp coord;
    Mlp gene;
    Linear head;
    Linear fuse;
    Linear proj_m;
    Linear proj_g;
    double log_tau = 0.0;

    static ModelParams init(const EncoderConfig& config);

    /// Flattened view in a fixed order; names look like "image.0.w", "fuse.b", "log_tau".
    std::vector<NamedTensor> named() const;
    /// Overwrites weights from tensors in named() order.
    void assign(std::span<const Tensor2> values);
    std::size_t n_params() const;
    /// FNV-1a over the bit patterns of every weight.
    std::uint64_t checksum() const;

    TensorArchive to_archive() const;
    static ModelParams from_archive(const TensorArchive& archive);
};

struct LinearVars {
    ad::Var w;
    ad::Var b;
    bool has_bias = true;
};

struct MlpVars {
    std::vector<LinearVars> layers;
};

/// ModelParams mirrored as graph nodes.
struct ModelVars {
    MlpVars image;
    MlpVars coord;
    MlpVars gene;
    LinearVars head;
    LinearVars fuse;
    LinearVars proj_m;
    LinearVars proj_g;
    ad::Var log_tau;

    /// Nodes in ModelParams::named() order.
    std::vector<ad::Var> all() const;
};

/// Creates parameter (trainable) or constant leaves for every weight.
ModelVars bind_model(ad::Graph& g, const ModelParams& params, bool trainable);
/// Reuses existing leaves, given in ModelParams::named() order.
ModelVars bind_model(const ModelParams& layout, std::span<const ad::Var> leaves);

ad::Var linear(ad::Var x, const LinearVars& layer);
ad::Var mlp_forward(ad::Var x, const MlpVars& mlp);

/// F_H = f_θ(x)
ad::Var encode_image(ad::Var feats, const ModelVars& m);
/// ĝ = h_φ(F_H), standardized expression
ad::Var regress(ad::Var f_h, const ModelVars& m);
/// F_C = e_ψ(p). Records a warning when coordinates leave the [-0.5, 1.5] band.
ad::Var encode_coord(ad::Var coords_unit, const ModelVars& m);
/// F_M = fuse([F_H ; F_C])
ad::Var fuse(ad::Var f_h, ad::Var f_c, const ModelVars& m);
/// F_G = g_ω(g̃)
ad::Var encode_gene(ad::Var g_std, const ModelVars& m);
/// Linear head without bias followed by row L2 normalization.
ad::Var project(ad::Var f, const LinearVars& head);
/// τ = exp(log_tau), 1 x 1.
ad::Var temperature(const ModelVars& m);

// Value-only conveniences (no gradient tape kept).
Tensor2 encode_image(const Tensor2& feats, const ModelParams& p);
Tensor2 regress(const Tensor2& f_h, const ModelParams& p);
Tensor2 mlp_forward(const Tensor2& x, const Mlp& mlp);

} // namespace chrep

#endif
