#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dlsim/errors.hpp"
#include "dlsim/topology.hpp"

using namespace dlsim;
namespace fs = std::filesystem;

namespace {

void expect_invariants(const Topology& t) {
  const std::size_t n = t.size();
  std::vector<std::vector<NodeId>> adj(n);
  for (NodeId v = 0; v < n; ++v) {
    const auto nn = t.neighbors(v);
    EXPECT_TRUE(std::is_sorted(nn.begin(), nn.end()));
    EXPECT_TRUE(std::binary_search(nn.begin(), nn.end(), v)) << "self missing at " << v;
    for (NodeId u : nn) EXPECT_TRUE(t.adjacent(u, v)) << "asymmetric " << v << "-" << u;
    adj[v].assign(nn.begin(), nn.end());
  }
  EXPECT_EQ(connected_components(adj).size(), 1u);
}

fs::path write_temp(const std::string& name, const std::string& body) {
  const fs::path dir = fs::temp_directory_path() / "dlsim_test_topology";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

}  // namespace

TEST(Topology, ChainDegrees) {
  const Topology t = chain(5);
  expect_invariants(t);
  const std::vector<std::size_t> expected{2, 3, 3, 3, 2};
  for (NodeId v = 0; v < 5; ++v) EXPECT_EQ(t.degree(v), expected[v]);
  const Topology two = chain(2);
  EXPECT_EQ(two.degree(0), 2u);
  EXPECT_EQ(two.degree(1), 2u);
  EXPECT_THROW(chain(1), std::invalid_argument);
  for (std::size_t n = 2; n < 30; ++n) expect_invariants(chain(n));
}

TEST(Topology, Torus) {
  for (auto [r, c] : {std::pair{6, 6}, {3, 3}, {3, 5}, {4, 7}}) {
    const Topology t = torus(r, c);
    expect_invariants(t);
    EXPECT_EQ(t.size(), std::size_t(r * c));
    for (NodeId v = 0; v < t.size(); ++v) EXPECT_EQ(t.degree(v), 5u);
  }
  EXPECT_THROW(torus(2, 5), std::invalid_argument);
  EXPECT_THROW(torus(5, 2), std::invalid_argument);
}

TEST(Topology, TorusMaxDistanceIsSix) {
  const auto d = shortest_path_distances(torus(6, 6));
  std::size_t m = 0;
  for (const auto& row : d) m = std::max(m, *std::max_element(row.begin(), row.end()));
  EXPECT_EQ(m, 6u);
}

TEST(Topology, Complete) {
  const Topology t = complete(3);
  expect_invariants(t);
  for (NodeId v = 0; v < 3; ++v) EXPECT_EQ(t.degree(v), 3u);
  const auto d = shortest_path_distances(complete(7));
  for (NodeId v = 0; v < 7; ++v) {
    for (NodeId u = 0; u < 7; ++u) EXPECT_EQ(d[v][u], v == u ? 0u : 1u);
  }
}

TEST(Topology, Star) {
  const Topology t = star(6, 2);
  expect_invariants(t);
  EXPECT_EQ(t.degree(2), 6u);
  for (NodeId v : {0, 1, 3, 4, 5}) {
    EXPECT_EQ(t.degree(v), 2u);
    EXPECT_TRUE(t.covers(2, v));
  }
  EXPECT_FALSE(t.covers(0, 1));
}

TEST(Topology, RandomRegular) {
  Rng rng(1, stream_id(Stream::kTopology));
  const Topology cyc = random_regular(rng, 8, 2);
  expect_invariants(cyc);
  for (NodeId v = 0; v < 8; ++v) EXPECT_EQ(cyc.degree(v), 3u);
  const Topology k6 = random_regular(rng, 6, 5);
  for (NodeId v = 0; v < 6; ++v) EXPECT_EQ(k6.degree(v), 6u);
  EXPECT_THROW(random_regular(rng, 5, 3), std::invalid_argument);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed, 0);
    const std::size_t n = 10 + 2 * seed;
    const std::size_t d = 3 + seed % 4;
    const Topology t = random_regular(r, n, d);
    expect_invariants(t);
    for (NodeId v = 0; v < n; ++v) EXPECT_EQ(t.degree(v), d + 1);
  }
}

TEST(Topology, Expander) {
  Rng a(9, stream_id(Stream::kTopology)), b(9, stream_id(Stream::kTopology));
  const Topology t = expander(a, 128);
  expect_invariants(t);
  const Topology u = expander(b, 128);
  for (NodeId v = 0; v < 128; ++v) {
    EXPECT_TRUE(std::equal(t.neighbors(v).begin(), t.neighbors(v).end(),
                           u.neighbors(v).begin(), u.neighbors(v).end()));
  }
  // Mean edge count over seeds approaches ln(128)/128 * 8128 ~ 308.
  double total = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    Rng r(s, 0);
    total += static_cast<double>(expander(r, 128).edge_count());
  }
  EXPECT_NEAR(total / 40.0, std::log(128.0) / 128.0 * 8128.0, 10.0);
  EXPECT_THROW(expander(a, 3), std::invalid_argument);
}

TEST(Topology, EdgeListParsing) {
  const Topology t = from_edge_list(write_temp("chain.txt", "# a chain\n0 1\n1 2\n"));
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.degree(1), 3u);
  const Topology d = from_edge_list(write_temp("dup.txt", "0 1\n1 0\n0 1\n"));
  EXPECT_EQ(d.edge_count(), 1u);
  EXPECT_THROW(from_edge_list(write_temp("bad.txt", "0 x\n")), IoError);
  EXPECT_THROW(from_edge_list(write_temp("split.txt", "0 1\n2 3\n")), std::invalid_argument);
  EXPECT_THROW(from_edge_list(fs::temp_directory_path() / "dlsim_missing_edges.txt"), IoError);
}

TEST(Topology, DisconnectedGraphNamesComponents) {
  const std::vector<std::pair<NodeId, NodeId>> edges{{0, 1}, {2, 3}};
  try {
    Topology::from_edges(4, edges);
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("{0,1}"), std::string::npos) << msg;
    EXPECT_NE(msg.find("{2,3}"), std::string::npos) << msg;
  }
  const std::vector<std::pair<NodeId, NodeId>> out_of_range{{0, 4}};
  EXPECT_THROW(Topology::from_edges(4, out_of_range), std::invalid_argument);
}

TEST(Topology, SocialStyleEdgeListAverageDegree) {
  // 32 nodes, a ring plus 60 deterministic chords: 92 edges, mean degree 5.75.
  std::string body = "# synthetic social graph\n";
  std::set<std::pair<int, int>> edges;
  for (int v = 0; v < 32; ++v) edges.insert({std::min(v, (v + 1) % 32), std::max(v, (v + 1) % 32)});
  for (int step = 3; edges.size() < 92; ++step) {
    for (int v = 0; v < 32 && edges.size() < 92; v += 2) {
      const int u = (v + step) % 32;
      edges.insert({std::min(u, v), std::max(u, v)});
    }
  }
  for (auto [a, b] : edges) body += std::to_string(a) + " " + std::to_string(b) + "\n";
  const Topology t = from_edge_list(write_temp("social32.txt", body));
  expect_invariants(t);
  EXPECT_EQ(t.size(), 32u);
  EXPECT_NEAR(t.mean_degree(), 5.74, 0.01);
}

TEST(Topology, ChainDistances) {
  const auto d = shortest_path_distances(chain(5));
  EXPECT_EQ(d[0][4], 4u);
  EXPECT_EQ(d[2][2], 0u);
}
