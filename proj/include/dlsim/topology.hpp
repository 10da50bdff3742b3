#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlsim/rng.hpp"

namespace dlsim {

using NodeId = std::size_t;

// Undirected, connected communication graph. nn(v) is stored sorted and
// always contains v itself, so the line-8 aggregation is a plain mean over
// neighbors(v).
class Topology {
 public:
  // Builds from undirected edges over nodes 0..n-1. Duplicates and explicit
  // self-loops are tolerated; self-loops are added for every node. Throws
  // std::invalid_argument for out-of-range endpoints or a disconnected graph
  // (the message lists the components).
  static Topology from_edges(std::size_t n,
                             std::span<const std::pair<NodeId, NodeId>> edges);

  std::size_t size() const { return adjacency_.size(); }
  // nn(v), sorted, self included.
  std::span<const NodeId> neighbors(NodeId v) const { return adjacency_.at(v); }
  // |nn(v)|, self included.
  std::size_t degree(NodeId v) const { return adjacency_.at(v).size(); }
  bool adjacent(NodeId v, NodeId u) const;
  // nn(a) is a subset of nn(b).
  bool covers(NodeId b, NodeId a) const;
  std::size_t edge_count() const;  // undirected, self-loops excluded
  double mean_degree() const;      // self excluded

 private:
  explicit Topology(std::vector<std::vector<NodeId>> adjacency)
      : adjacency_(std::move(adjacency)) {}
  std::vector<std::vector<NodeId>> adjacency_;
};

// Connected components of an adjacency list, each sorted.
std::vector<std::vector<NodeId>> connected_components(
    const std::vector<std::vector<NodeId>>& adjacency);

// Restart budget for the random families.
inline constexpr int kMaxTopologyAttempts = 1000;

Topology chain(std::size_t n);
Topology torus(std::size_t rows, std::size_t cols);
Topology complete(std::size_t n);
Topology star(std::size_t n, NodeId center);
Topology random_regular(Rng& rng, std::size_t n, std::size_t d);
// Erdos-Renyi with edge probability ln(n)/n, regenerated until connected.
Topology expander(Rng& rng, std::size_t n);
// Whitespace-separated "u v" pairs, 0-based, '#' comment lines allowed.
// The node count is 1 + the largest index.
Topology from_edge_list(const std::filesystem::path& path);

// All-pairs hop counts by BFS (self-loops ignored).
std::vector<std::vector<std::size_t>> shortest_path_distances(const Topology& topology);

}  // namespace dlsim
