#ifndef CHREP_TOPOLOGY_HPP
#define CHREP_TOPOLOGY_HPP

#include "chrep/tensor.hpp"

#include <span>
#include <vector>

namespace chrep {

/// Coordinate-induced topology prior for one mini-batch.
struct TopoPrior {
    std::vector<Tensor2> a_hops;  ///< A^(h), h = 1..H: exact shortest-path distance h
    Tensor2 a_topo;               ///< Σ α_h A^(h)
};

/// Symmetric 0/1 kNN adjacency from Euclidean distances, self excluded.
/// Each spot links to its k nearest others, ties ordered by (distance, index);
/// the directed graph is then symmetrized with logical OR. k >= B is clipped
/// to B - 1 with a warning.
Tensor2 build_knn_graph(const Tensor2& coords, std::size_t k);

/// A^(h)[i,j] = 1 iff the shortest path between i and j in `a1` has exactly h
/// edges, for h = 1..h_hop. Computed by breadth-first search from every node.
std::vector<Tensor2> multihop(const Tensor2& a1, std::size_t h_hop);

TopoPrior build_topo_prior(const Tensor2& coords, std::size_t k, std::span<const double> alpha);

} // namespace chrep

#endif
