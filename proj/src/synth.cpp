#include "chrep/synth.hpp"

#include "chrep/error.hpp"
#include "chrep/rng.hpp"

#include <cmath>
#include <cstdio>

namespace chrep {

void SynthConfig::validate() const {
    if (n_slides < 1 || spots_per_slide < 1 || g < 1 || d_img < 1 || n_latent < 1 || n_bumps < 1) {
        throw ConfigError("synth: all counts must be >= 1");
    }
    if (!(noise_expr >= 0.0) || !(noise_feat >= 0.0) || !(shift_strength >= 0.0)) {
        throw ConfigError("synth: noise and shift must be >= 0");
    }
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"name", c.name},
                       {"n_slides", c.n_slides},
                       {"spots_per_slide", c.spots_per_slide},
                       {"G", c.g},
                       {"D_img", c.d_img},
                       {"n_latent", c.n_latent},
                       {"n_bumps", c.n_bumps},
                       {"noise_expr", c.noise_expr},
                       {"noise_feat", c.noise_feat},
                       {"shift_strength", c.shift_strength},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    c.name = j.value("name", c.name);
    c.n_slides = j.value("n_slides", c.n_slides);
    c.spots_per_slide = j.value("spots_per_slide", c.spots_per_slide);
    c.g = j.value("G", c.g);
    c.d_img = j.value("D_img", c.d_img);
    c.n_latent = j.value("n_latent", c.n_latent);
    c.n_bumps = j.value("n_bumps", c.n_bumps);
    c.noise_expr = j.value("noise_expr", c.noise_expr);
    c.noise_feat = j.value("noise_feat", c.noise_feat);
    c.shift_strength = j.value("shift_strength", c.shift_strength);
    c.seed = j.value("seed", c.seed);
}

namespace {

std::string padded(const char* prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
    return buf;
}

} // namespace

Cohort generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t L = cfg.n_latent;
    Rng shared(derive_seed(cfg.seed, "synth/shared"));

    std::vector<double> base(cfg.g), w_g(cfg.g * L), w_x(cfg.d_img * L);
    for (auto& v : base) v = shared.uniform(0.5, 3.0);
    const double sg = 1.0 / std::sqrt(static_cast<double>(L));
    for (auto& v : w_g) v = shared.normal(0.0, sg);
    for (auto& v : w_x) v = shared.normal(0.0, sg);

    Cohort cohort;
    cohort.name = cfg.name;
    for (std::size_t j = 0; j < cfg.g; ++j) cohort.gene_names.push_back(padded("gene", j, 3));

    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cfg.spots_per_slide))));
    const double extent = static_cast<double>(side);

    for (std::size_t s = 0; s < cfg.n_slides; ++s) {
        Rng rng(derive_seed(cfg.seed, "synth/slide", s));
        const std::string slide_id = padded("slide", s, 2);
        const std::size_t n = cfg.spots_per_slide;

        std::vector<std::array<double, 2>> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            pos[i] = {static_cast<double>(i % side) + rng.uniform(-0.25, 0.25),
                      static_cast<double>(i / side) + rng.uniform(-0.25, 0.25)};
        }

        std::vector<double> z(n * L, 0.0);
        for (std::size_t l = 0; l < L; ++l) {
            for (std::size_t b = 0; b < cfg.n_bumps; ++b) {
                const double cx = rng.uniform(0.0, extent), cy = rng.uniform(0.0, extent);
                const double w = extent * rng.uniform(0.15, 0.35);
                const double amp = rng.normal();
                for (std::size_t i = 0; i < n; ++i) {
                    const double dx = pos[i][0] - cx, dy = pos[i][1] - cy;
                    z[i * L + l] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
                }
            }
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += z[i * L + l];
            m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) v += (z[i * L + l] - m) * (z[i * L + l] - m);
            const double sd = std::sqrt(v / static_cast<double>(n));
            for (std::size_t i = 0; i < n; ++i) z[i * L + l] = sd > 1e-12 ? (z[i * L + l] - m) / sd : 0.0;
        }

        std::vector<double> a(cfg.d_img), off(cfg.d_img);
        for (std::size_t d = 0; d < cfg.d_img; ++d) {
            a[d] = std::exp(cfg.shift_strength * rng.normal());
            off[d] = cfg.shift_strength * rng.normal();
        }

        auto& spots = cohort.slides[slide_id];
        spots.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            SpotRecord r;
            r.slide_id = slide_id;
            r.spot_id = padded("spot", i, 4);
            r.coord = pos[i];
            r.expr_raw.resize(cfg.g);
            for (std::size_t j = 0; j < cfg.g; ++j) {
                double eta = base[j];
                for (std::size_t l = 0; l < L; ++l) eta += w_g[j * L + l] * z[i * L + l];
                eta += cfg.noise_expr * rng.normal();
                r.expr_raw[j] = std::round(std::exp(eta));
            }
            r.feat.resize(cfg.d_img);
            for (std::size_t d = 0; d < cfg.d_img; ++d) {
                double x = 0.0;
                for (std::size_t l = 0; l < L; ++l) x += w_x[d * L + l] * z[i * L + l];
                r.feat[d] = a[d] * x + off[d] + cfg.noise_feat * rng.normal();
            }
            spots.push_back(std::move(r));
        }
    }
    cohort.validate();
    return cohort;
}

Cohort generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir) {
    Cohort c = generate_synthetic(cfg);
    write_cohort(c, dir);
    return c;
}

} // namespace chrep
