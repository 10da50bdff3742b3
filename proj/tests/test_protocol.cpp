#include <gtest/gtest.h>

#include <cmath>

#include "dlsim/errors.hpp"
#include "dlsim/protocol.hpp"
#include "dlsim/secure_agg.hpp"
#include "test_support.hpp"

using namespace dlsim;
using dlsim::testing::blob_world;
using dlsim::testing::BlobOptions;
using dlsim::testing::zero_gradient_world;

namespace {

ParamVec filled(std::size_t n, double v) {
  ParamVec p(n);
  for (double& x : p.mutable_values()) x = v;
  return p;
}

std::vector<RoundLog> run_rounds(World& w, std::size_t rounds,
                                 EngineKind engine = EngineKind::kDpsgd) {
  std::vector<RoundLog> logs;
  ExperimentOptions opt;
  opt.engine = engine;
  opt.rounds = rounds;
  run_experiment(w, opt, [&](const RoundLog& l) { logs.push_back(l); });
  return logs;
}

// Sends a constant vector to every neighbor and records what it was shown.
class Recorder : public Behavior {
 public:
  std::string name() const override { return "recorder"; }
  std::map<NodeId, ParamVec> forge(const ForgeContext& ctx) override {
    seen_sizes.push_back(ctx.inbox.size());
    std::map<NodeId, ParamVec> out;
    for (NodeId u : ctx.neighbors) {
      if (u != ctx.self) out[u] = ParamVec(ctx.own_state.size());
    }
    return out;
  }
  std::vector<std::size_t> seen_sizes;
};

class Stray : public Behavior {
 public:
  std::string name() const override { return "stray"; }
  std::map<NodeId, ParamVec> forge(const ForgeContext& ctx) override {
    return {{ctx.self == 0 ? 4 : 0, ctx.own_state}};
  }
};

}  // namespace

TEST(Protocol, ChainOfTwoAveragesToMidpoint) {
  auto w = zero_gradient_world(chain(2));
  w->node(0).params = filled(4, 0.0);
  w->node(1).params = filled(4, 2.0);
  const RoundLog log = dpsgd_round(*w, 1);
  EXPECT_EQ(log.states[0], filled(4, 1.0));
  EXPECT_EQ(log.states[1], filled(4, 1.0));
  EXPECT_EQ(log.consensus_distance, 0.0);
}

TEST(Protocol, ZeroGradientsLeaveCommonStateFixed) {
  for (const Topology& t : {complete(3), torus(3, 4), star(5, 0)}) {
    auto w = zero_gradient_world(t);
    for (NodeId v = 0; v < w->size(); ++v) w->node(v).params = filled(4, 0.375);
    for (const auto& log : run_rounds(*w, 10)) {
      for (const auto& s : log.states) EXPECT_EQ(s, filled(4, 0.375));
      for (const auto& [v, g] : log.true_gradients) EXPECT_EQ(l2_norm(g), 0.0);
    }
  }
}

TEST(Protocol, TracedInfluenceMatchesMatrixPower) {
  const Topology t = chain(5);
  const Matrix w4 = influence_matrix(t, 4);
  EXPECT_NEAR(w4(0, 4), 1.0 / 54.0, 1e-15);
  auto w = zero_gradient_world(t);
  // Perturb a weight coordinate of node 4 only; inputs are zero so it never
  // reaches the logits and gradients stay exactly zero.
  w->node(4).params.mutable_values()[0] = 1.0;
  const auto logs = run_rounds(*w, 4);
  for (NodeId v = 0; v < 5; ++v) {
    EXPECT_NEAR(logs[4].states[v][0], w4(v, 4), 1e-12) << "node " << v;
  }
  EXPECT_NEAR(logs[4].states[0][0], 1.0 / 54.0, 1e-12);
}

TEST(Protocol, InfluenceMatrixRowsAreStochastic) {
  for (const Topology& t : {chain(6), torus(3, 3), star(7, 3), complete(4)}) {
    for (std::size_t r = 1; r <= 5; ++r) {
      const Matrix m = influence_matrix(t, r);
      for (std::size_t v = 0; v < t.size(); ++v) {
        double s = 0;
        for (std::size_t u = 0; u < t.size(); ++u) s += m(v, u);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
  const Matrix k = influence_matrix(complete(4), 1);
  EXPECT_DOUBLE_EQ(k(2, 3), 0.25);
  EXPECT_THROW(influence_matrix(chain(3), 0), std::invalid_argument);
}

TEST(Consensus, Examples) {
  const std::vector<ParamVec> two{{0.0}, {2.0}};
  EXPECT_DOUBLE_EQ(consensus_distance(two), 4.0);
  const std::vector<ParamVec> same(5, ParamVec{1.5, -2.0});
  EXPECT_EQ(consensus_distance(same), 0.0);
  const std::vector<ParamVec> one{{1.0}};
  EXPECT_THROW(consensus_distance(one), std::invalid_argument);
}

TEST(Consensus, OracleAndPermutationInvariance) {
  Rng rng(4, 4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ParamVec> s(2 + rng.uniform_index(6), ParamVec(3));
    for (auto& p : s) {
      for (double& x : p.mutable_values()) x = rng.normal();
    }
    double oracle = 0;
    for (std::size_t v = 0; v < s.size(); ++v) {
      for (std::size_t u = 0; u < s.size(); ++u) {
        if (u == v) continue;
        for (std::size_t i = 0; i < 3; ++i) oracle += (s[v][i] - s[u][i]) * (s[v][i] - s[u][i]);
      }
    }
    const double n = static_cast<double>(s.size());
    EXPECT_NEAR(consensus_distance(s), oracle / (n * n - n), 1e-12);
    rng.shuffle(std::span<ParamVec>(s));
    EXPECT_NEAR(consensus_distance(s), oracle / (n * n - n), 1e-12);
  }
}

TEST(Protocol, RegularGraphsPreserveTheMean) {
  for (const Topology& t : {torus(3, 4), complete(5)}) {
    WorldConfig wc;
    wc.seed = 3;
    auto w = blob_world(t, wc);
    for (const auto& log : run_rounds(*w, 8)) {
      if (log.round == 0) continue;
      std::vector<ParamVec> emitted;
      for (const auto& [v, p] : log.updates) emitted.push_back(p);
      EXPECT_LE(max_abs_diff(mean(std::span<const ParamVec>(emitted)),
                             mean(std::span<const ParamVec>(log.states))),
                1e-12);
    }
  }
}

TEST(Protocol, FedavgMatchesCompleteGraph) {
  WorldConfig wc;
  wc.seed = 17;
  wc.lr = 0.2;
  auto dl = blob_world(complete(6), wc);
  auto fl = blob_world(complete(6), wc);
  const auto a = run_rounds(*dl, 30, EngineKind::kDpsgd);
  const auto b = run_rounds(*fl, 30, EngineKind::kFedavg);
  for (std::size_t t = 0; t <= 30; ++t) {
    for (NodeId v = 0; v < 6; ++v) EXPECT_LE(max_abs_diff(a[t].states[v], b[t].states[v]), 1e-12);
  }
  EXPECT_LE(max_abs_diff(fl->global_params(), dl->node(0).params), 1e-12);
  for (const auto& m : b[1].messages) EXPECT_EQ(m.receiver, kServerId);
}

TEST(Protocol, SingleUserFedavgIsPlainSgd) {
  Rng rng(5, stream_id(Stream::kData));
  auto ds = std::make_shared<const Dataset>(make_blobs(rng, 40, 3, 2, 1.0));
  Partition part;
  for (std::size_t i = 0; i < 30; ++i) part.shards.resize(1), part.shards[0].push_back(i);
  for (std::size_t i = 30; i < 40; ++i) part.holdout.push_back(i);
  WorldConfig wc;
  wc.spec = ModelSpec::linear(3, 2);
  wc.seed = 5;
  wc.batch_size = 8;
  const ParamVec init(wc.spec.param_count());
  const std::vector<std::pair<NodeId, NodeId>> none;
  World w(wc, ds, part, Topology::from_edges(1, none), init);
  ParamVec ref = init;
  for (std::size_t t = 1; t <= 10; ++t) {
    fedavg_round(w, t);
    Rng br(wc.seed, stream_id(Stream::kBatch, 0, t));
    ref = sgd_step(wc.spec, ref, sample_batch(br, *ds, part.shards[0], wc.batch_size), wc.lr);
    EXPECT_LE(max_abs_diff(w.global_params(), ref), 1e-15);
  }
}

TEST(Protocol, IdenticalShardsMakeGlobalEqualOneStep) {
  Rng rng(6, stream_id(Stream::kData));
  auto ds = std::make_shared<const Dataset>(make_blobs(rng, 20, 3, 2, 1.0));
  Partition part;
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5, 6, 7};
  part.shards.assign(4, rows);
  part.holdout = {10, 11, 12};
  WorldConfig wc;
  wc.spec = ModelSpec::linear(3, 2);
  wc.batch_size = rows.size();  // full batch: every user computes the same step
  Rng ir(6, stream_id(Stream::kInit));
  const ParamVec init = init_params(wc.spec, ir);
  World w(wc, ds, part, complete(4), init);
  fedavg_round(w, 1);
  const ParamVec single = sgd_step(wc.spec, init, make_batch(*ds, rows), wc.lr);
  EXPECT_LE(max_abs_diff(w.global_params(), single), 1e-12);
}

TEST(Protocol, ZeroRoundsLogsOnlyInitialState) {
  WorldConfig wc;
  auto w = blob_world(torus(3, 3), wc);
  const auto logs = run_rounds(*w, 0);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(logs[0].round, 0u);
  EXPECT_TRUE(logs[0].messages.empty());
  EXPECT_EQ(logs[0].consensus_distance, 0.0);
  for (const auto& s : logs[0].states) EXPECT_EQ(s, w->initial_params());
}

TEST(Protocol, MessagesFollowEdges) {
  WorldConfig wc;
  auto w = blob_world(star(5, 1), wc);
  const RoundLog log = dpsgd_round(*w, 1);
  EXPECT_EQ(log.messages.size(), 2 * w->topology().edge_count());
  for (std::size_t i = 0; i < log.messages.size(); ++i) {
    const auto& m = log.messages[i];
    EXPECT_EQ(m.seq, i);
    EXPECT_EQ(m.round, 1u);
    EXPECT_TRUE(w->topology().adjacent(m.sender, m.receiver));
    EXPECT_NE(m.sender, m.receiver);
    EXPECT_EQ(m.update, log.updates.at(m.sender));
  }
}

TEST(Protocol, RushingDeliversHonestMessagesFirst) {
  for (auto schedule : {ScheduleKind::kRushing, ScheduleKind::kSynchronous}) {
    WorldConfig wc;
    wc.schedule = schedule;
    auto w = blob_world(torus(3, 3), wc);
    auto rec = std::make_unique<Recorder>();
    Recorder* r = rec.get();
    w->set_behavior(0, std::move(rec));
    const RoundLog log = dpsgd_round(*w, 1);
    EXPECT_FALSE(log.true_gradients.count(0));
    ASSERT_EQ(r->seen_sizes.size(), 1u);
    if (schedule == ScheduleKind::kRushing) {
      EXPECT_EQ(r->seen_sizes[0], 4u);
      std::size_t max_honest = 0, min_adv = SIZE_MAX;
      for (const auto& m : log.messages) {
        if (m.sender == 0) {
          min_adv = std::min(min_adv, m.seq);
        } else {
          max_honest = std::max(max_honest, m.seq);
        }
      }
      EXPECT_LT(max_honest, min_adv);
    } else {
      EXPECT_EQ(r->seen_sizes[0], 0u);
    }
  }
}

TEST(Protocol, ForgingToNonNeighborIsRejected) {
  WorldConfig wc;
  auto w = blob_world(chain(5), wc);
  w->set_behavior(0, std::make_unique<Stray>());
  EXPECT_THROW(dpsgd_round(*w, 1), std::logic_error);
}

TEST(Protocol, FedavgRejectsActiveNodes) {
  WorldConfig wc;
  auto w = blob_world(complete(3), wc);
  w->set_behavior(1, std::make_unique<Recorder>());
  EXPECT_THROW(fedavg_round(*w, 1), PreconditionError);
}

TEST(Protocol, ThreadCountDoesNotChangeResults) {
  for (bool sa : {false, true}) {
    WorldConfig a;
    a.seed = 8;
    a.momentum = 0.5;
    a.local_steps = 2;
    a.noise_sigma = 0.01;
    a.secure_aggregation = sa;
    WorldConfig b = a;
    b.threads = 4;
    BlobOptions o;
    o.mlp = true;
    auto w1 = blob_world(torus(3, 4), a, o);
    auto w2 = blob_world(torus(3, 4), b, o);
    const auto l1 = run_rounds(*w1, 6);
    const auto l2 = run_rounds(*w2, 6);
    for (std::size_t t = 0; t < l1.size(); ++t) {
      for (NodeId v = 0; v < 12; ++v) {
        EXPECT_EQ(l1[t].per_node[v].params_hash, l2[t].per_node[v].params_hash);
        EXPECT_EQ(l1[t].per_node[v].train_loss, l2[t].per_node[v].train_loss);
      }
      EXPECT_EQ(l1[t].consensus_distance, l2[t].consensus_distance);
    }
  }
}

TEST(Protocol, SameSeedSameRun) {
  WorldConfig wc;
  wc.seed = 99;
  auto w1 = blob_world(chain(4), wc);
  auto w2 = blob_world(chain(4), wc);
  const auto l1 = run_rounds(*w1, 5);
  const auto l2 = run_rounds(*w2, 5);
  for (std::size_t t = 0; t < l1.size(); ++t) EXPECT_EQ(l1[t].states, l2[t].states);
  wc.seed = 100;
  auto w3 = blob_world(chain(4), wc);
  EXPECT_NE(run_rounds(*w3, 5)[5].states, l1[5].states);
}

TEST(Protocol, ConsensusDecaysGeometricallyWithoutGradients) {
  WorldConfig wc;
  wc.seed = 2;
  wc.lr = 0.3;
  wc.lr_milestones = {{6, 0.0}};
  auto w = blob_world(torus(6, 6), wc);
  const auto logs = run_rounds(*w, 60);
  for (std::size_t t = 7; t <= 60; ++t) {
    EXPECT_LE(logs[t].consensus_distance, logs[t - 1].consensus_distance * (1 + 1e-12));
  }
  // Second-largest |eigenvalue| of W by power iteration on the complement of
  // the consensus direction; C shrinks by its square per round.
  const Matrix mix = influence_matrix(w->topology(), 1);
  Matrix x(36, 1);
  Rng rng(2, 2);
  for (double& e : x.flat()) e = rng.normal();
  double lambda = 0.0;
  for (int it = 0; it < 400; ++it) {
    double avg = 0.0;
    for (double e : x.flat()) avg += e / 36.0;
    for (double& e : x.flat()) e -= avg;
    Matrix y = matmul(mix, x);
    double ny = 0.0, nx = 0.0;
    for (double e : y.flat()) ny += e * e;
    for (double e : x.flat()) nx += e * e;
    lambda = std::sqrt(ny / nx);
    for (double& e : y.flat()) e /= std::sqrt(ny);
    x = y;
  }
  const double ratio = logs[60].consensus_distance / logs[59].consensus_distance;
  EXPECT_NEAR(ratio, lambda * lambda, 0.02);
  EXPECT_EQ(logs[10].lr, 0.0);
}

TEST(Protocol, LearningRateMilestonesCompound) {
  WorldConfig wc;
  wc.lr = 1.0;
  wc.lr_milestones = {{3, 0.5}, {5, 0.1}};
  auto w = zero_gradient_world(chain(2), wc);
  EXPECT_EQ(w->lr_at(2), 1.0);
  EXPECT_EQ(w->lr_at(3), 0.5);
  EXPECT_DOUBLE_EQ(w->lr_at(7), 0.05);
}

TEST(Protocol, EarlyStoppingOnFlatValidationLoss) {
  auto w = zero_gradient_world(torus(3, 3));
  ExperimentOptions opt;
  opt.rounds = 50;
  opt.early_stopping = {true, 3};
  std::size_t seen = 0;
  const auto summary = run_experiment(*w, opt, [&](const RoundLog&) { ++seen; });
  EXPECT_TRUE(summary.stopped_early);
  EXPECT_EQ(summary.rounds_run, 4u);
  EXPECT_EQ(seen, 5u);
  for (double v : summary.validation_loss) EXPECT_NEAR(v, std::log(2.0), 1e-15);
}

TEST(Protocol, SecureAggregationMatchesPlainAverage) {
  WorldConfig plain;
  plain.seed = 12;
  WorldConfig sa = plain;
  sa.secure_aggregation = true;
  auto w1 = blob_world(torus(3, 3), plain);
  auto w2 = blob_world(torus(3, 3), sa);
  const auto l1 = run_rounds(*w1, 5);
  const auto l2 = run_rounds(*w2, 5);
  for (std::size_t t = 1; t <= 5; ++t) {
    EXPECT_EQ(l2[t].sa_outputs.size(), 9u);
    EXPECT_TRUE(l1[t].sa_outputs.empty());
    for (NodeId v = 0; v < 9; ++v) EXPECT_LE(max_abs_diff(l1[t].states[v], l2[t].states[v]), 1e-9);
  }
  auto f1 = blob_world(complete(4), plain);
  auto f2 = blob_world(complete(4), sa);
  const auto g1 = run_rounds(*f1, 3, EngineKind::kFedavg);
  const auto g2 = run_rounds(*f2, 3, EngineKind::kFedavg);
  EXPECT_LE(max_abs_diff(f1->global_params(), f2->global_params()), 1e-9);
  EXPECT_TRUE(g2[2].sa_outputs.count(kServerId));
}

TEST(Protocol, LargeClipThresholdIsPlainAveraging) {
  WorldConfig plain;
  plain.seed = 13;
  WorldConfig clipped = plain;
  clipped.clip_tau = 1e6;
  auto w1 = blob_world(chain(5), plain);
  auto w2 = blob_world(chain(5), clipped);
  const auto l1 = run_rounds(*w1, 5);
  const auto l2 = run_rounds(*w2, 5);
  for (NodeId v = 0; v < 5; ++v) EXPECT_LE(max_abs_diff(l1[5].states[v], l2[5].states[v]), 1e-12);
}

TEST(Protocol, NoiseTouchesOnlyEmittedUpdates) {
  WorldConfig wc;
  wc.seed = 14;
  wc.noise_sigma = 0.5;
  auto w = blob_world(complete(3), wc);
  WorldConfig quiet = wc;
  quiet.noise_sigma = 0.0;
  auto q = blob_world(complete(3), quiet);
  const RoundLog noisy = dpsgd_round(*w, 1);
  const RoundLog clean = dpsgd_round(*q, 1);
  for (NodeId v = 0; v < 3; ++v) {
    EXPECT_EQ(noisy.true_gradients.at(v), clean.true_gradients.at(v));
    EXPECT_GT(max_abs_diff(noisy.updates.at(v), clean.updates.at(v)), 0.0);
  }
  // Node 0 averages its own clean update with the noisy updates of 1 and 2.
  std::vector<ParamVec> inputs{clean.updates.at(0), noisy.updates.at(1), noisy.updates.at(2)};
  EXPECT_LE(max_abs_diff(noisy.states[0], mean(std::span<const ParamVec>(inputs))), 1e-15);
}

TEST(Protocol, WorldValidatesShapes) {
  WorldConfig wc;
  wc.spec = ModelSpec::linear(2, 2);
  Dataset ds;
  ds.inputs = Matrix(4, 2);
  ds.labels = {0, 1, 0, 1};
  auto shared = std::make_shared<const Dataset>(ds);
  Partition p;
  p.shards = {{0}, {1}, {2}};
  EXPECT_THROW(World(wc, shared, p, chain(2), ParamVec(6)), std::invalid_argument);
  p.shards = {{0}, {1}};
  EXPECT_THROW(World(wc, shared, p, chain(2), ParamVec(5)), DimensionError);
}

TEST(SecureAgg, Examples) {
  SAGroup g;
  g.participants = {0, 1, 2};
  g.seed = 1;
  const std::map<NodeId, ParamVec> in{{0, {1.0}}, {1, {2.0}}, {2, {3.0}}};
  EXPECT_NEAR(secure_aggregate(g, in)[0], 6.0, 1e-9);
  g.dropped = {2};
  EXPECT_NEAR(secure_aggregate(g, in)[0], 3.0, 1e-9);
  EXPECT_LE(l2_norm(mask_residual(g, 5)), 1e-9);
  g.threshold = 3;
  EXPECT_THROW(secure_aggregate(g, in), PreconditionError);
}

TEST(SecureAgg, SharesHideInputsAndSumExactly) {
  Rng rng(7, 7);
  for (int trial = 0; trial < 20; ++trial) {
    SAGroup g;
    const std::size_t k = 2 + rng.uniform_index(6);
    for (NodeId v = 0; v < k; ++v) g.participants.push_back(v * 3);
    g.seed = static_cast<std::uint64_t>(trial);
    g.instance = 5;
    std::map<NodeId, ParamVec> in;
    ParamVec plain(8);
    for (NodeId v : g.participants) {
      ParamVec x(8);
      for (double& e : x.mutable_values()) e = rng.normal();
      plain += x;
      const ParamVec share = masked_share(g, v, x);
      EXPECT_GT(max_abs_diff(share, x), 1e-3);
      in.emplace(v, std::move(x));
    }
    EXPECT_LE(max_abs_diff(secure_aggregate(g, in), plain), 1e-9);
    EXPECT_LE(l2_norm(mask_residual(g, 8)), 1e-9);
  }
}
