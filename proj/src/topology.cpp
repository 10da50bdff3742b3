#include "dlsim/topology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dlsim/errors.hpp"

namespace dlsim {
namespace {

using EdgeList = std::vector<std::pair<NodeId, NodeId>>;

std::vector<std::vector<NodeId>> build_adjacency(std::size_t n,
                                                 std::span<const std::pair<NodeId, NodeId>> edges) {
  std::vector<std::set<NodeId>> sets(n);
  for (NodeId v = 0; v < n; ++v) sets[v].insert(v);
  for (auto [u, v] : edges) {
    if (u >= n || v >= n) {
      throw std::invalid_argument("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                                  ") out of range for " + std::to_string(n) + " nodes");
    }
    sets[u].insert(v);
    sets[v].insert(u);
  }
  std::vector<std::vector<NodeId>> adj(n);
  for (NodeId v = 0; v < n; ++v) adj[v].assign(sets[v].begin(), sets[v].end());
  return adj;
}

std::string describe_components(const std::vector<std::vector<NodeId>>& comps) {
  std::ostringstream os;
  os << comps.size() << " components:";
  for (const auto& c : comps) {
    os << " {";
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << "}";
  }
  return os.str();
}

}  // namespace

std::vector<std::vector<NodeId>> connected_components(
    const std::vector<std::vector<NodeId>>& adjacency) {
  const std::size_t n = adjacency.size();
  std::vector<bool> seen(n, false);
  std::vector<std::vector<NodeId>> comps;
  for (NodeId s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<NodeId> comp;
    std::deque<NodeId> queue{s};
    seen[s] = true;
    while (!queue.empty()) {
      const NodeId v = queue.front();
      queue.pop_front();
      comp.push_back(v);
      for (NodeId u : adjacency[v]) {
        if (!seen[u]) {
          seen[u] = true;
          queue.push_back(u);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

Topology Topology::from_edges(std::size_t n,
                              std::span<const std::pair<NodeId, NodeId>> edges) {
  if (n == 0) throw std::invalid_argument("topology needs at least one node");
  auto adj = build_adjacency(n, edges);
  const auto comps = connected_components(adj);
  if (comps.size() != 1) {
    throw std::invalid_argument("topology is disconnected: " + describe_components(comps));
  }
  return Topology(std::move(adj));
}

bool Topology::adjacent(NodeId v, NodeId u) const {
  const auto nn = neighbors(v);
  return std::binary_search(nn.begin(), nn.end(), u);
}

bool Topology::covers(NodeId b, NodeId a) const {
  const auto na = neighbors(a);
  const auto nb = neighbors(b);
  return std::includes(nb.begin(), nb.end(), na.begin(), na.end());
}

std::size_t Topology::edge_count() const {
  std::size_t twice = 0;
  for (const auto& nn : adjacency_) twice += nn.size() - 1;
  return twice / 2;
}

double Topology::mean_degree() const {
  return 2.0 * static_cast<double>(edge_count()) / static_cast<double>(size());
}

Topology chain(std::size_t n) {
  if (n < 2) throw std::invalid_argument("chain needs n >= 2");
  EdgeList edges;
  for (NodeId v = 0; v + 1 < n; ++v) edges.emplace_back(v, v + 1);
  return Topology::from_edges(n, edges);
}

Topology torus(std::size_t rows, std::size_t cols) {
  if (rows < 3 || cols < 3) {
    throw std::invalid_argument("torus needs rows >= 3 and cols >= 3");
  }
  EdgeList edges;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const NodeId v = r * cols + c;
      edges.emplace_back(v, r * cols + (c + 1) % cols);
      edges.emplace_back(v, ((r + 1) % rows) * cols + c);
    }
  }
  return Topology::from_edges(rows * cols, edges);
}

Topology complete(std::size_t n) {
  if (n < 1) throw std::invalid_argument("complete graph needs n >= 1");
  EdgeList edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) edges.emplace_back(u, v);
  }
  return Topology::from_edges(n, edges);
}

Topology star(std::size_t n, NodeId center) {
  if (n < 2) throw std::invalid_argument("star needs n >= 2");
  if (center >= n) throw std::invalid_argument("star center out of range");
  EdgeList edges;
  for (NodeId v = 0; v < n; ++v) {
    if (v != center) edges.emplace_back(center, v);
  }
  return Topology::from_edges(n, edges);
}

Topology random_regular(Rng& rng, std::size_t n, std::size_t d) {
  if (d < 2) throw std::invalid_argument("random_regular needs d >= 2");
  if (d >= n) throw std::invalid_argument("random_regular needs d < n");
  if ((n * d) % 2 != 0) {
    throw std::invalid_argument("random_regular: n*d = " + std::to_string(n * d) +
                                " is odd, no d-regular graph exists");
  }
  // Pairing model with local rejection: stubs that cannot be paired validly
  // are retried; a dead end restarts from scratch.
  for (int attempt = 0; attempt < kMaxTopologyAttempts; ++attempt) {
    std::set<std::pair<NodeId, NodeId>> edges;
    std::vector<NodeId> stubs;
    for (NodeId v = 0; v < n; ++v) stubs.insert(stubs.end(), d, v);
    bool dead_end = false;
    while (!stubs.empty() && !dead_end) {
      rng.shuffle(std::span<NodeId>(stubs));
      std::vector<NodeId> leftover;
      bool progress = false;
      for (std::size_t i = 0; i + 1 < stubs.size(); i += 2) {
        NodeId u = stubs[i], v = stubs[i + 1];
        if (u > v) std::swap(u, v);
        if (u != v && !edges.contains({u, v})) {
          edges.insert({u, v});
          progress = true;
        } else {
          leftover.push_back(u);
          leftover.push_back(v);
        }
      }
      if (!progress && !leftover.empty()) {
        // Any valid pair left at all?
        bool possible = false;
        for (std::size_t i = 0; i < leftover.size() && !possible; ++i) {
          for (std::size_t j = i + 1; j < leftover.size() && !possible; ++j) {
            NodeId u = std::min(leftover[i], leftover[j]);
            NodeId v = std::max(leftover[i], leftover[j]);
            possible = u != v && !edges.contains({u, v});
          }
        }
        dead_end = !possible;
      }
      stubs = std::move(leftover);
    }
    if (dead_end) continue;
    const EdgeList list(edges.begin(), edges.end());
    auto adj = build_adjacency(n, list);
    if (connected_components(adj).size() == 1) return Topology::from_edges(n, list);
  }
  throw std::runtime_error("random_regular(" + std::to_string(n) + ", " +
                           std::to_string(d) + "): no connected simple graph after " +
                           std::to_string(kMaxTopologyAttempts) + " attempts");
}

Topology expander(Rng& rng, std::size_t n) {
  if (n < 4) throw std::invalid_argument("expander needs n >= 4");
  const double p = std::log(static_cast<double>(n)) / static_cast<double>(n);
  for (int attempt = 0; attempt < kMaxTopologyAttempts; ++attempt) {
    EdgeList edges;
    for (NodeId u = 0; u < n; ++u) {
      for (NodeId v = u + 1; v < n; ++v) {
        if (rng.uniform() < p) edges.emplace_back(u, v);
      }
    }
    auto adj = build_adjacency(n, edges);
    if (connected_components(adj).size() == 1) return Topology::from_edges(n, edges);
  }
  throw std::runtime_error("expander(" + std::to_string(n) + "): no connected sample after " +
                           std::to_string(kMaxTopologyAttempts) + " attempts");
}

Topology from_edge_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open edge list " + path.string());
  EdgeList edges;
  std::size_t max_id = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    long long u = -1, v = -1;
    std::string extra;
    if (!(fields >> u >> v) || (fields >> extra) || u < 0 || v < 0) {
      throw IoError(path.string() + ":" + std::to_string(line_no) +
                    ": expected two non-negative node indices");
    }
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    max_id = std::max({max_id, static_cast<std::size_t>(u), static_cast<std::size_t>(v)});
  }
  if (edges.empty()) throw IoError(path.string() + ": no edges");
  return Topology::from_edges(max_id + 1, edges);
}

std::vector<std::vector<std::size_t>> shortest_path_distances(const Topology& topology) {
  const std::size_t n = topology.size();
  constexpr std::size_t kUnreached = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> dist(n, std::vector<std::size_t>(n, kUnreached));
  for (NodeId s = 0; s < n; ++s) {
    auto& d = dist[s];
    d[s] = 0;
    std::deque<NodeId> queue{s};
    while (!queue.empty()) {
      const NodeId v = queue.front();
      queue.pop_front();
      for (NodeId u : topology.neighbors(v)) {
        if (d[u] == kUnreached) {
          d[u] = d[v] + 1;
          queue.push_back(u);
        }
      }
    }
  }
  return dist;
}

}  // namespace dlsim
