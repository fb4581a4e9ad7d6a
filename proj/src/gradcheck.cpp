#include "chrep/gradcheck.hpp"

#include "chrep/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace chrep {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor2>& leaves) {
    ad::Graph g;
    std::vector<ad::Var> vars;
    vars.reserve(leaves.size());
    for (const auto& t : leaves) vars.push_back(g.constant(t));
    return build(g, vars).item();
}

} // namespace

GradCheckResult check_gradient(const LossBuilder& build, const std::vector<Tensor2>& leaves, double h) {
    if (!(h > 0.0)) throw ContractError("check_gradient: h must be positive");

    ad::Graph g;
    std::vector<ad::Var> vars;
    vars.reserve(leaves.size());
    for (const auto& t : leaves) vars.push_back(g.param(t));
    ad::Var loss = build(g, vars);
    const double base = loss.item();
    g.backward(loss);

    const double again = evaluate(build, leaves);
    if (std::memcmp(&base, &again, sizeof(double)) != 0) {
        throw OracleError("check_gradient: builder is not deterministic (" + std::to_string(base) + " vs " +
                          std::to_string(again) + ")");
    }

    GradCheckResult res;
    std::vector<Tensor2> work = leaves;
    std::size_t flat = 0;
    for (std::size_t l = 0; l < work.size(); ++l) {
        const Tensor2& grad = vars[l].grad();
        for (std::size_t i = 0; i < work[l].size(); ++i, ++flat) {
            const double orig = work[l][i];
            work[l][i] = orig + h;
            const double up = evaluate(build, work);
            work[l][i] = orig - h;
            const double down = evaluate(build, work);
            work[l][i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad[i];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            const double err = std::abs(analytic - numeric) / denom;
            if (err > res.max_rel_error || flat == 0) {
                res.max_rel_error = err;
                res.worst_index = flat;
                res.analytic = analytic;
                res.numeric = numeric;
            }
        }
    }
    res.n_params = flat;
    return res;
}

GradCheckResult check_gradient(const std::function<ad::Var(ad::Graph&, ad::Var theta)>& build,
                               std::span<const double> theta, double h) {
    LossBuilder wrapped = [&build](ad::Graph& g, std::span<const ad::Var> leaves) { return build(g, leaves[0]); };
    return check_gradient(wrapped, {Tensor2::row_vector(theta)}, h);
}

} // namespace chrep
