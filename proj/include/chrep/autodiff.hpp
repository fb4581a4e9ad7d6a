#ifndef CHREP_AUTODIFF_HPP
#define CHREP_AUTODIFF_HPP

#include "chrep/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>

namespace chrep::ad {

/// Guard constant for divide, log and normalize.
inline constexpr double kGuardEps = 1e-8;

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    const Tensor2& value() const;
    const Tensor2& grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    /// Value of a 1x1 node.
    double item() const;
    bool requires_grad() const;

    Graph* graph() const { return g_; }
    std::size_t id() const { return id_; }
    bool valid() const { return g_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

    Graph* g_ = nullptr;
    std::size_t id_ = 0;
};

/// Tape of operations recorded in creation order.
///
/// Creation order is a topological order, so backward() walks the tape once
/// from the root down. A graph accepts one backward() per zero_grad().
class Graph {
public:
    /// Propagates the gradient of a node to its parents. Receives the node's
    /// accumulated output gradient.
    using BackwardFn = std::function<void(Graph&, const Tensor2& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor2 value);
    Var param(Tensor2 value);

    /// Fills d(root)/d(node) for every node that requires a gradient.
    void backward(Var root);
    /// Clears gradients and re-arms backward().
    void zero_grad();

    const Tensor2& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor2& grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
    std::size_t size() const { return nodes_.size(); }

    /// Adds delta into the gradient buffer of node id (no-op if it needs no gradient).
    void accumulate(std::size_t id, const Tensor2& delta);
    /// Mutable gradient buffer, allocated on first use.
    Tensor2& grad_buffer(std::size_t id);

    /// Records a derived node. Throws NumericError naming `op` if the value is not finite.
    Var record(std::string op, Tensor2 value, bool requires_grad, BackwardFn fn);

private:
    struct Node {
        Tensor2 value;
        Tensor2 grad;
        bool requires_grad = false;
        std::string op;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

// Elementwise binary operations broadcast when one operand has a unit
// dimension (row vector, column vector, or 1x1 scalar).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a / (b + eps). Pass eps = 0 for exact division when b is known positive.
Var div(Var a, Var b, double eps = kGuardEps);

Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var transpose(Var a);
Var concat_cols(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var exp(Var a);
/// log(a + eps).
Var log(Var a, double eps = kGuardEps);
Var sqrt(Var a);
Var square(Var a);
/// |a| with subgradient 0 at 0.
Var abs(Var a);

/// Softmax of each row, computed with per-row max subtraction.
Var row_softmax(Var a);
/// log(row_softmax(a)), computed stably.
Var row_log_softmax(Var a);
/// Each row divided by max(||row||, eps).
Var row_l2_normalize(Var a, double eps = kGuardEps);

Var sum(Var a);
Var mean(Var a);
/// Sum of each row, R x 1.
Var row_sum(Var a);
/// Sum of each column, 1 x C.
Var col_sum(Var a);
Var row_mean(Var a);
Var col_mean(Var a);

} // namespace chrep::ad

#endif
