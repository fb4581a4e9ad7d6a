#include "chrep/optimizer.hpp"

#include "chrep/error.hpp"

#include <cmath>

namespace chrep {

void to_json(nlohmann::json& j, const AdamConfig& c) {
    j = nlohmann::json{{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

void from_json(const nlohmann::json& j, AdamConfig& c) {
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
}

Adam::Adam(AdamConfig cfg, std::span<const Tensor2> shapes) : cfg_(cfg) {
    if (!(cfg.lr > 0.0) || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
        throw ConfigError("adam: need lr > 0 and betas in [0, 1)");
    }
    for (const auto& s : shapes) {
        m_.emplace_back(s.rows(), s.cols());
        v_.emplace_back(s.rows(), s.cols());
    }
}

void Adam::step(std::span<Tensor2> params, std::span<const Tensor2> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("adam: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor2& p = params[i];
        const Tensor2& g = grads[i];
        if (!p.same_shape(g) || !p.same_shape(m_[i])) throw ShapeError("adam: gradient shape mismatch");
        for (std::size_t k = 0; k < p.size(); ++k) {
            m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
            v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double mh = m_[i][k] / bc1;
            const double vh = v_[i][k] / bc2;
            p[k] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

} // namespace chrep
