#include "chrep/topology.hpp"

#include "chrep/error.hpp"
#include "chrep/warnings.hpp"

#include <algorithm>
#include <numeric>

namespace chrep {

Tensor2 build_knn_graph(const Tensor2& coords, std::size_t k) {
    const std::size_t n = coords.rows();
    if (n < 2) throw ContractError("build_knn_graph: need at least 2 spots");
    if (k < 1) throw ConfigError("build_knn_graph: k must be >= 1");
    if (k >= n) {
        warn("build_knn_graph: k=" + std::to_string(k) + " clipped to " + std::to_string(n - 1));
        k = n - 1;
    }
    Tensor2 a(n, n);
    std::vector<std::size_t> order(n - 1);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < coords.cols(); ++c) {
                const double d = coords(i, c) - coords(j, c);
                d2 += d * d;
            }
            dist[j] = d2;
        }
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order[m++] = j;
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t x, std::size_t y) { return dist[x] < dist[y] || (dist[x] == dist[y] && x < y); });
        for (std::size_t t = 0; t < k; ++t) {
            a(i, order[t]) = 1.0;
            a(order[t], i) = 1.0;
        }
    }
    return a;
}

std::vector<Tensor2> multihop(const Tensor2& a1, std::size_t h_hop) {
    const std::size_t n = a1.rows();
    if (a1.cols() != n) throw ShapeError("multihop: adjacency must be square");
    if (h_hop < 1) throw ConfigError("multihop: h_hop must be >= 1");
    std::vector<Tensor2> hops(h_hop, Tensor2(n, n));
    std::vector<std::size_t> depth(n);
    std::vector<std::size_t> queue;
    queue.reserve(n);
    constexpr std::size_t unseen = static_cast<std::size_t>(-1);
    for (std::size_t s = 0; s < n; ++s) {
        std::fill(depth.begin(), depth.end(), unseen);
        queue.clear();
        depth[s] = 0;
        queue.push_back(s);
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::size_t u = queue[head];
            if (depth[u] == h_hop) continue;
            for (std::size_t v = 0; v < n; ++v) {
                if (a1(u, v) != 0.0 && v != u && depth[v] == unseen) {
                    depth[v] = depth[u] + 1;
                    hops[depth[v] - 1](s, v) = 1.0;
                    queue.push_back(v);
                }
            }
        }
    }
    return hops;
}

TopoPrior build_topo_prior(const Tensor2& coords, std::size_t k, std::span<const double> alpha) {
    if (alpha.empty()) throw ConfigError("build_topo_prior: alpha must have h_hop >= 1 entries");
    TopoPrior p;
    p.a_hops = multihop(build_knn_graph(coords, k), alpha.size());
    const std::size_t n = coords.rows();
    p.a_topo = Tensor2(n, n);
    for (std::size_t h = 0; h < alpha.size(); ++h)
        for (std::size_t i = 0; i < n * n; ++i) p.a_topo[i] += alpha[h] * p.a_hops[h][i];
    return p;
}

} // namespace chrep
