#ifndef CHREP_GRADCHECK_HPP
#define CHREP_GRADCHECK_HPP

#include "chrep/autodiff.hpp"

#include <functional>
#include <span>
#include <vector>

namespace chrep {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;  ///< flat index into the concatenated parameters
    double analytic = 0.0;        ///< gradient at worst_index
    double numeric = 0.0;         ///< central difference at worst_index
    std::size_t n_params = 0;
};

/// Builds a scalar loss from parameter leaves created on the given graph.
using LossBuilder = std::function<ad::Var(ad::Graph&, std::span<const ad::Var> leaves)>;

/// Compares reverse-mode gradients with central differences
/// (L(θ+h e_i) - L(θ-h e_i)) / 2h over every entry of every leaf.
///
/// The relative error for one coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws OracleError when two evaluations at the unperturbed point disagree.
GradCheckResult check_gradient(const LossBuilder& build, const std::vector<Tensor2>& leaves, double h = 1e-4);

/// Flat-vector form: the builder receives θ as a single 1 x n leaf.
GradCheckResult check_gradient(const std::function<ad::Var(ad::Graph&, ad::Var theta)>& build,
                               std::span<const double> theta, double h = 1e-4);

} // namespace chrep

#endif
