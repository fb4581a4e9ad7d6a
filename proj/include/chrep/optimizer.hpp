#ifndef CHREP_OPTIMIZER_HPP
#define CHREP_OPTIMIZER_HPP

#include "chrep/tensor.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <vector>

namespace chrep {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);

/// Adaptive-moment-estimation updates with bias correction.
class Adam {
public:
    Adam(AdamConfig cfg, std::span<const Tensor2> shapes);

    /// params[i] -= lr * m̂ / (sqrt(v̂) + eps), elementwise.
    void step(std::span<Tensor2> params, std::span<const Tensor2> grads);
    std::size_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor2> m_;
    std::vector<Tensor2> v_;
    std::size_t t_ = 0;
};

} // namespace chrep

#endif
