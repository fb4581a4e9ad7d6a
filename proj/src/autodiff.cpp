#include "chrep/autodiff.hpp"

#include "chrep/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace chrep::ad {

const Tensor2& Var::value() const {
    return g_->value(id_);
}

const Tensor2& Var::grad() const {
    return g_->grad(id_);
}

double Var::item() const {
    const Tensor2& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("item: expected 1x1, got " + v.shape_str());
    return v[0];
}

bool Var::requires_grad() const {
    return g_->requires_grad(id_);
}

Var Graph::constant(Tensor2 value) {
    return record("constant", std::move(value), false, nullptr);
}

Var Graph::param(Tensor2 value) {
    return record("param", std::move(value), true, nullptr);
}

Var Graph::record(std::string op, Tensor2 value, bool requires_grad, BackwardFn fn) {
    if (!value.all_finite()) throw NumericError(op + ": non-finite result");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = std::move(op);
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor2& Graph::grad(std::size_t id) const {
    // Nodes that never received a gradient report zeros of their shape.
    auto& node = const_cast<Node&>(nodes_[id]);
    if (node.grad.empty() && !node.value.empty()) node.grad = Tensor2(node.value.rows(), node.value.cols());
    return node.grad;
}

Tensor2& Graph::grad_buffer(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor2(node.value.rows(), node.value.cols());
    return node.grad;
}

void Graph::accumulate(std::size_t id, const Tensor2& delta) {
    if (!nodes_[id].requires_grad) return;
    Tensor2& g = grad_buffer(id);
    if (!g.same_shape(delta)) {
        throw ShapeError("accumulate: gradient " + delta.shape_str() + " for node " + g.shape_str());
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Graph::backward(Var root) {
    if (root.graph() != this) throw ContractError("backward: root belongs to another graph");
    if (backward_done_) throw ContractError("backward: called twice without zero_grad()");
    const Tensor2& rv = value(root.id());
    if (rv.rows() != 1 || rv.cols() != 1) throw ContractError("backward: root must be 1x1, got " + rv.shape_str());
    backward_done_ = true;
    if (!nodes_[root.id()].requires_grad) return;
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
        if (!n.grad.all_finite()) throw NumericError(n.op + ": non-finite gradient");
        n.backward(*this, n.grad);
    }
}

void Graph::zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor2();
    backward_done_ = false;
}

namespace {

Graph& graph_of(Var a) {
    if (!a.valid()) throw ContractError("operation on an empty Var");
    return *a.graph();
}

Graph& graph_of(Var a, Var b) {
    Graph& g = graph_of(a);
    if (b.graph() != &g) throw ContractError("operands belong to different graphs");
    return g;
}

std::size_t bcast_dim(std::size_t x, std::size_t y, const char* op, const Tensor2& a, const Tensor2& b) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(std::string(op) + ": cannot broadcast " + a.shape_str() + " with " + b.shape_str());
}

// Elementwise binary op with row/column/scalar broadcasting on either side.
// f(x, y) gives the value; dx(x, y) and dy(x, y) the partial derivatives.
template <typename F, typename DX, typename DY>
Var binary(const char* op, Var a, Var b, F f, DX dx, DY dy) {
    Graph& g = graph_of(a, b);
    const Tensor2& av = a.value();
    const Tensor2& bv = b.value();
    const std::size_t rows = bcast_dim(av.rows(), bv.rows(), op, av, bv);
    const std::size_t cols = bcast_dim(av.cols(), bv.cols(), op, av, bv);
    const bool ar = av.rows() == 1, ac = av.cols() == 1, br = bv.rows() == 1, bc = bv.cols() == 1;
    auto ai = [=, ncol = av.cols()](std::size_t r, std::size_t c) { return (ar ? 0 : r) * ncol + (ac ? 0 : c); };
    auto bi = [=, ncol = bv.cols()](std::size_t r, std::size_t c) { return (br ? 0 : r) * ncol + (bc ? 0 : c); };
    Tensor2 out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(av[ai(r, c)], bv[bi(r, c)]);
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::size_t aid = a.id(), bid = b.id();
    return g.record(op, std::move(out), rg, [=](Graph& gr, const Tensor2& og) {
        const Tensor2& x = gr.value(aid);
        const Tensor2& y = gr.value(bid);
        if (gr.requires_grad(aid)) {
            Tensor2& ga = gr.grad_buffer(aid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const double xv = x[ai(r, c)], yv = y[bi(r, c)];
                    ga[ai(r, c)] += og(r, c) * dx(xv, yv);
                }
        }
        if (gr.requires_grad(bid)) {
            Tensor2& gb = gr.grad_buffer(bid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const double xv = x[ai(r, c)], yv = y[bi(r, c)];
                    gb[bi(r, c)] += og(r, c) * dy(xv, yv);
                }
        }
    });
}

// Elementwise unary op; d(x, y) is the derivative given input x and output y.
template <typename F, typename D>
Var unary(const char* op, Var a, F f, D d) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    const std::size_t aid = a.id();
    const std::size_t oid = g.size();
    return g.record(op, std::move(out), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        const Tensor2& x = gr.value(aid);
        const Tensor2& y = gr.value(oid);
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += og[i] * d(x[i], y[i]);
    });
}

} // namespace

Var add(Var a, Var b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var div(Var a, Var b, double eps) {
    return binary(
        "div", a, b, [eps](double x, double y) { return x / (y + eps); },
        [eps](double, double y) { return 1.0 / (y + eps); },
        [eps](double x, double y) { return -x / ((y + eps) * (y + eps)); });
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
    Graph& g = graph_of(a, b);
    Tensor2 out = chrep::matmul(a.value(), b.value(), trans_a, trans_b);
    const std::size_t aid = a.id(), bid = b.id();
    const bool rg = a.requires_grad() || b.requires_grad();
    return g.record("matmul", std::move(out), rg, [=](Graph& gr, const Tensor2& og) {
        const Tensor2& x = gr.value(aid);
        const Tensor2& y = gr.value(bid);
        // C = op(A) op(B); dop(A) = dC op(B)^T, dop(B) = op(A)^T dC.
        if (gr.requires_grad(aid)) {
            Tensor2 d = trans_a ? chrep::matmul(y, og, trans_b, true) : chrep::matmul(og, y, false, !trans_b);
            gr.accumulate(aid, d);
        }
        if (gr.requires_grad(bid)) {
            Tensor2 d = trans_b ? chrep::matmul(og, x, true, trans_a) : chrep::matmul(x, og, !trans_a, false);
            gr.accumulate(bid, d);
        }
    });
}

Var transpose(Var a) {
    Graph& g = graph_of(a);
    const std::size_t aid = a.id();
    return g.record("transpose", chrep::transpose(a.value()), a.requires_grad(),
                    [=](Graph& gr, const Tensor2& og) { gr.accumulate(aid, chrep::transpose(og)); });
}

Var concat_cols(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor2& av = a.value();
    const Tensor2& bv = b.value();
    if (av.rows() != bv.rows()) throw ShapeError("concat_cols: " + av.shape_str() + " with " + bv.shape_str());
    const std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor2 out(rows, ca + cb);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
        std::copy(bv.row(r).begin(), bv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
    }
    const std::size_t aid = a.id(), bid = b.id();
    const bool rg = a.requires_grad() || b.requires_grad();
    return g.record("concat_cols", std::move(out), rg, [=](Graph& gr, const Tensor2& og) {
        if (gr.requires_grad(aid)) {
            Tensor2& ga = gr.grad_buffer(aid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < ca; ++c) ga(r, c) += og(r, c);
        }
        if (gr.requires_grad(bid)) {
            Tensor2& gb = gr.grad_buffer(bid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cb; ++c) gb(r, c) += og(r, ca + c);
        }
    });
}

Var scale(Var a, double s) {
    return unary(
        "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary(
        "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a, double eps) {
    return unary(
        "log", a, [eps](double x) { return std::log(x + eps); }, [eps](double x, double) { return 1.0 / (x + eps); });
}

Var sqrt(Var a) {
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
    return unary(
        "abs", a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var row_softmax(Var a) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        const auto row = av.row(r);
        if (row.empty()) continue;
        const double m = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) s += out(r, c) = std::exp(row[c] - m);
        for (std::size_t c = 0; c < row.size(); ++c) out(r, c) /= s;
    }
    const std::size_t aid = a.id();
    const std::size_t oid = g.size();
    return g.record("row_softmax", std::move(out), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        const Tensor2& y = gr.value(oid);
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) dot += og(r, c) * y(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (og(r, c) - dot);
        }
    });
}

Var row_log_softmax(Var a) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        const auto row = av.row(r);
        if (row.empty()) continue;
        const double m = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - m);
        const double lse = m + std::log(s);
        for (std::size_t c = 0; c < row.size(); ++c) out(r, c) = row[c] - lse;
    }
    const std::size_t aid = a.id();
    const std::size_t oid = g.size();
    return g.record("row_log_softmax", std::move(out), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        const Tensor2& y = gr.value(oid);
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) total += og(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += og(r, c) - std::exp(y(r, c)) * total;
        }
    });
}

Var row_l2_normalize(Var a, double eps) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(av.rows(), av.cols());
    std::vector<double> norms(av.rows());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double ss = 0.0;
        for (double v : av.row(r)) ss += v * v;
        norms[r] = std::sqrt(ss);
        const double d = std::max(norms[r], eps);
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) / d;
    }
    const std::size_t aid = a.id();
    const std::size_t oid = g.size();
    return g.record("row_l2_normalize", std::move(out), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        const Tensor2& y = gr.value(oid);
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            if (norms[r] > eps) {
                // d(x/|x|) = (I - y y^T) / |x|
                double dot = 0.0;
                for (std::size_t c = 0; c < y.cols(); ++c) dot += og(r, c) * y(r, c);
                for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += (og(r, c) - y(r, c) * dot) / norms[r];
            } else {
                for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += og(r, c) / eps;
            }
        }
    });
}

Var sum(Var a) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += v;
    const std::size_t aid = a.id();
    return g.record("sum", Tensor2::scalar(s), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += og[0];
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0.0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (double v : av.row(r)) out(r, 0) += v;
    const std::size_t aid = a.id();
    return g.record("row_sum", std::move(out), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += og(r, 0);
    });
}

Var col_sum(Var a) {
    Graph& g = graph_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
    const std::size_t aid = a.id();
    return g.record("col_sum", std::move(out), a.requires_grad(), [=](Graph& gr, const Tensor2& og) {
        Tensor2& ga = gr.grad_buffer(aid);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += og(0, c);
    });
}

Var row_mean(Var a) {
    if (a.cols() == 0) throw ShapeError("row_mean: no columns");
    return scale(row_sum(a), 1.0 / static_cast<double>(a.cols()));
}

Var col_mean(Var a) {
    if (a.rows() == 0) throw ShapeError("col_mean: no rows");
    return scale(col_sum(a), 1.0 / static_cast<double>(a.rows()));
}

} // namespace chrep::ad
