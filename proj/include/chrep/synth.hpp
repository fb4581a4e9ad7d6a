#ifndef CHREP_SYNTH_HPP
#define CHREP_SYNTH_HPP

#include "chrep/cohort.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace chrep {

struct SynthConfig {
    std::string name = "synthetic";
    std::size_t n_slides = 6;
    std::size_t spots_per_slide = 400;
    std::size_t g = 50;
    std::size_t d_img = 32;
    std::size_t n_latent = 4;
    std::size_t n_bumps = 6;     ///< Gaussian bumps per latent dimension and slide
    double noise_expr = 0.3;     ///< std of the log-rate noise
    double noise_feat = 0.3;     ///< std of the additive feature noise
    double shift_strength = 0.5; ///< per-slide feature scale/offset spread
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Latent-field cohort. Each slide places spots on a jittered square grid and
/// draws n_latent smooth fields as sums of Gaussian bumps (centered and scaled
/// to unit variance within the slide). Shared loadings map the latent vector
/// to expression, expr = round(exp(c + W_g z + noise)), and to features,
/// feat = a_s * (W_x z) + b_s + noise, where a_s = exp(shift * N(0,1)) and
/// b_s = shift * N(0,1) per feature dimension and slide.
Cohort generate_synthetic(const SynthConfig& cfg);

/// Generates and writes the cohort directory; returns the in-memory cohort.
Cohort generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir);

} // namespace chrep

#endif
