#include "dlsim/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "dlsim/defenses.hpp"
#include "dlsim/errors.hpp"
#include "dlsim/secure_agg.hpp"

namespace dlsim {

std::string to_string(EngineKind kind) {
  return kind == EngineKind::kDpsgd ? "dpsgd" : "fedavg";
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kSynchronous ? "synchronous" : "rushing";
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t k = std::min(threads, n);
  pool.reserve(k);
  for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

World::World(WorldConfig config, std::shared_ptr<const Dataset> dataset,
             Partition partition, Topology topology, const ParamVec& initial_params)
    : config_(std::move(config)),
      dataset_(std::move(dataset)),
      partition_(std::move(partition)),
      topology_(std::move(topology)),
      initial_params_(initial_params),
      global_(initial_params) {
  config_.spec.validate();
  if (partition_.n_users() != topology_.size()) {
    throw std::invalid_argument("partition has " + std::to_string(partition_.n_users()) +
                                " shards but topology has " +
                                std::to_string(topology_.size()) + " nodes");
  }
  if (dataset_->input_dim() != config_.spec.input_dim) {
    throw DimensionError("dataset width does not match model input_dim");
  }
  if (initial_params_.size() != config_.spec.param_count()) {
    throw DimensionError("initial parameters do not match the model");
  }
  if (config_.local_steps == 0) throw std::invalid_argument("local_steps must be >= 1");
  if (config_.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  nodes_.resize(topology_.size());
  for (NodeId v = 0; v < nodes_.size(); ++v) {
    nodes_[v].id = v;
    nodes_[v].params = initial_params_;
    nodes_[v].shard = partition_.shards[v];
    nodes_[v].velocity = ParamVec(initial_params_.size());
  }
}

void World::set_behavior(NodeId v, std::unique_ptr<Behavior> behavior) {
  if (v >= size()) throw std::invalid_argument("behavior node out of range");
  behaviors_[v] = std::move(behavior);
}

Behavior* World::behavior(NodeId v) const {
  const auto it = behaviors_.find(v);
  return it == behaviors_.end() ? nullptr : it->second.get();
}

std::vector<NodeId> World::honest_nodes() const {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < size(); ++v) {
    if (!is_active(v)) out.push_back(v);
  }
  return out;
}

void World::simulate_sa_dropouts(NodeId v, std::vector<NodeId> dropped) {
  sa_dropouts_[v] = std::move(dropped);
}

std::span<const NodeId> World::sa_dropouts(NodeId v) const {
  const auto it = sa_dropouts_.find(v);
  if (it == sa_dropouts_.end()) return {};
  return it->second;
}

double World::lr_at(std::size_t round) const {
  double lr = config_.lr;
  for (const auto& [from, factor] : config_.lr_milestones) {
    if (round >= from) lr *= factor;
  }
  return lr;
}

double World::train_loss(NodeId v) const {
  const auto& n = nodes_.at(v);
  if (n.shard.empty()) return 0.0;
  return loss(config_.spec, n.params, make_batch(*dataset_, n.shard));
}

namespace {

struct LocalResult {
  ParamVec clean;    // theta^{t-1/2} before noise
  ParamVec emitted;  // what neighbors receive
  ParamVec first_gradient;
};

LocalResult local_update(World& world, NodeId v, const ParamVec& start,
                         std::size_t round) {
  const auto& cfg = world.config();
  NodeState& node = world.node(v);
  Rng batch_rng(cfg.seed, stream_id(Stream::kBatch, v, round));
  const double lr = world.lr_at(round);

  LocalResult r;
  ParamVec theta = start;
  for (std::size_t s = 0; s < cfg.local_steps; ++s) {
    const Batch batch = sample_batch(batch_rng, world.dataset(), node.shard, cfg.batch_size);
    ParamVec g = gradient(cfg.spec, theta, batch);
    if (lr > 0.0) {
      if (cfg.momentum > 0.0) {
        node.velocity *= cfg.momentum;
        node.velocity += g;
        theta.add_scaled(-lr, node.velocity);
      } else {
        theta.add_scaled(-lr, g);
      }
    }
    if (s == 0) r.first_gradient = std::move(g);
  }
  r.clean = theta;
  if (cfg.noise_sigma > 0.0) {
    Rng noise_rng(cfg.seed, stream_id(Stream::kNoise, v, round));
    r.emitted = noisy_update(theta, noise_rng, cfg.noise_sigma);
  } else {
    r.emitted = std::move(theta);
  }
  return r;
}

void finish_log(const World& world, RoundLog& log) {
  const std::size_t n = world.size();
  log.per_node.resize(n);
  parallel_for(n, world.config().threads, [&](std::size_t v) {
    log.per_node[v] = {v, world.train_loss(v), fnv1a64(world.node(v).params)};
  });
  log.states.clear();
  log.states.reserve(n);
  for (const auto& node : world.nodes()) log.states.push_back(node.params);
  std::vector<ParamVec> honest;
  for (NodeId v : world.honest_nodes()) honest.push_back(world.node(v).params);
  log.consensus_distance = honest.size() >= 2 ? consensus_distance(honest) : 0.0;
}

std::uint64_t sa_instance(std::size_t round, NodeId owner) {
  return (static_cast<std::uint64_t>(round) << 32) ^ static_cast<std::uint64_t>(owner);
}

}  // namespace

RoundLog World::initial_log() const {
  RoundLog log;
  log.round = 0;
  log.lr = lr_at(0);
  log.secure_aggregation = config_.secure_aggregation;
  finish_log(*this, log);
  return log;
}

RoundLog dpsgd_round(World& world, std::size_t round) {
  const auto& cfg = world.config();
  const auto& topo = world.topology();
  const std::size_t n = world.size();

  RoundLog log;
  log.round = round;
  log.lr = world.lr_at(round);
  log.secure_aggregation = cfg.secure_aggregation;

  // Local optimization.
  std::vector<std::optional<LocalResult>> local(n);
  parallel_for(n, cfg.threads, [&](std::size_t v) {
    if (world.is_active(v)) return;
    local[v] = local_update(world, v, world.node(v).params, round);
  });
  for (NodeId v = 0; v < n; ++v) {
    if (!local[v]) continue;
    log.updates[v] = local[v]->emitted;
    log.true_gradients[v] = local[v]->first_gradient;
  }

  // Communication.
  std::vector<std::map<NodeId, ParamVec>> inbox(n);
  std::size_t seq = 0;
  auto send = [&](NodeId from, NodeId to, const ParamVec& update) {
    inbox[to][from] = update;
    log.messages.push_back({from, to, round, seq++, update});
  };
  const std::map<NodeId, ParamVec> nothing;
  auto emit_active = [&](NodeId a, bool sees_current_round) {
    Behavior* b = world.behavior(a);
    const ForgeContext ctx{a, round, topo.neighbors(a),
                           sees_current_round ? inbox[a] : nothing, world.node(a).params};
    auto forged = b->forge(ctx);
    for (const auto& [to, _] : forged) {
      if (to == a || !topo.adjacent(a, to)) {
        throw std::logic_error("behavior " + b->name() + " addressed non-neighbor " +
                               std::to_string(to));
      }
    }
    for (NodeId u : topo.neighbors(a)) {
      if (u == a) continue;
      const auto it = forged.find(u);
      send(a, u, it != forged.end() ? it->second : world.node(a).params);
    }
    log.updates[a] = world.node(a).params;
  };
  auto emit_honest = [&](NodeId v) {
    for (NodeId u : topo.neighbors(v)) {
      if (u != v) send(v, u, local[v]->emitted);
    }
  };
  if (cfg.schedule == ScheduleKind::kRushing) {
    for (NodeId v = 0; v < n; ++v) {
      if (!world.is_active(v)) emit_honest(v);
    }
    for (NodeId a = 0; a < n; ++a) {
      if (world.is_active(a)) emit_active(a, true);
    }
  } else {
    for (NodeId v = 0; v < n; ++v) {
      if (world.is_active(v)) {
        emit_active(v, false);
      } else {
        emit_honest(v);
      }
    }
  }

  // Aggregation.
  std::vector<ParamVec> next(n);
  std::vector<std::optional<ParamVec>> sa_sum(n);
  parallel_for(n, cfg.threads, [&](std::size_t v) {
    const bool active = world.is_active(v);
    const ParamVec& own = active ? world.node(v).params : local[v]->clean;
    const auto nn = topo.neighbors(v);
    if (cfg.secure_aggregation && !active) {
      SAGroup group;
      group.participants.assign(nn.begin(), nn.end());
      const auto drops = world.sa_dropouts(v);
      group.dropped.assign(drops.begin(), drops.end());
      group.threshold = cfg.sa_threshold;
      group.seed = cfg.seed;
      group.instance = sa_instance(round, v);
      std::map<NodeId, ParamVec> inputs;
      for (NodeId u : nn) inputs.emplace(u, u == v ? own : inbox[v].at(u));
      ParamVec total = secure_aggregate(group, inputs);
      const double survivors = static_cast<double>(group.survivors().size());
      next[v] = total * (1.0 / survivors);
      sa_sum[v] = std::move(total);
      return;
    }
    if (cfg.clip_tau && !active) {
      std::vector<const ParamVec*> others;
      for (NodeId u : nn) {
        if (u != v) others.push_back(&inbox[v].at(u));
      }
      next[v] = self_centered_aggregate(own, others, *cfg.clip_tau);
      return;
    }
    std::vector<const ParamVec*> inputs;
    inputs.reserve(nn.size());
    for (NodeId u : nn) inputs.push_back(u == v ? &own : &inbox[v].at(u));
    next[v] = mean(std::span<const ParamVec* const>(inputs));
  });
  for (NodeId v = 0; v < n; ++v) {
    world.node(v).params = std::move(next[v]);
    if (sa_sum[v]) log.sa_outputs[v] = std::move(*sa_sum[v]);
  }

  for (NodeId a = 0; a < n; ++a) {
    if (Behavior* b = world.behavior(a)) b->observe(round, inbox[a]);
  }

  finish_log(world, log);
  return log;
}

RoundLog fedavg_round(World& world, std::size_t round) {
  const auto& cfg = world.config();
  const std::size_t n = world.size();
  for (NodeId v = 0; v < n; ++v) {
    if (world.is_active(v)) {
      throw PreconditionError("active behaviors are not supported by the fedavg engine");
    }
  }

  RoundLog log;
  log.round = round;
  log.lr = world.lr_at(round);
  log.secure_aggregation = cfg.secure_aggregation;

  const ParamVec global = world.global_params();
  std::vector<std::optional<LocalResult>> local(n);
  parallel_for(n, cfg.threads, [&](std::size_t v) {
    local[v] = local_update(world, v, global, round);
  });

  std::size_t seq = 0;
  for (NodeId v = 0; v < n; ++v) {
    log.updates[v] = local[v]->emitted;
    log.true_gradients[v] = local[v]->first_gradient;
    log.messages.push_back({v, kServerId, round, seq++, local[v]->emitted});
  }

  ParamVec next;
  if (cfg.secure_aggregation) {
    SAGroup group;
    for (NodeId v = 0; v < n; ++v) group.participants.push_back(v);
    group.threshold = cfg.sa_threshold;
    group.seed = cfg.seed;
    group.instance = sa_instance(round, kServerId);
    ParamVec total = secure_aggregate(group, log.updates);
    next = total * (1.0 / static_cast<double>(n));
    log.sa_outputs[kServerId] = std::move(total);
  } else {
    std::vector<const ParamVec*> inputs;
    for (NodeId v = 0; v < n; ++v) inputs.push_back(&local[v]->emitted);
    next = mean(std::span<const ParamVec* const>(inputs));
  }
  for (NodeId v = 0; v < n; ++v) world.node(v).params = next;
  world.set_global_params(std::move(next));

  finish_log(world, log);
  return log;
}

double consensus_distance(std::span<const ParamVec> states) {
  const std::size_t n = states.size();
  if (n < 2) throw std::invalid_argument("consensus distance needs at least two users");
  double total = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t u = v + 1; u < n; ++u) total += squared_distance(states[v], states[u]);
  }
  const double nd = static_cast<double>(n);
  return 2.0 * total / (nd * nd - nd);
}

Matrix influence_matrix(const Topology& topology, std::size_t rounds) {
  if (rounds == 0) throw std::invalid_argument("influence_matrix needs rounds >= 1");
  const std::size_t n = topology.size();
  Matrix w(n, n);
  for (NodeId v = 0; v < n; ++v) {
    const double weight = 1.0 / static_cast<double>(topology.degree(v));
    for (NodeId u : topology.neighbors(v)) w(v, u) = weight;
  }
  Matrix power = w;
  for (std::size_t t = 1; t < rounds; ++t) power = matmul(w, power);
  return power;
}

double validation_loss(const World& world) {
  const auto& holdout = world.partition().holdout;
  if (holdout.empty()) throw std::invalid_argument("validation needs a non-empty holdout");
  std::vector<const ParamVec*> models;
  for (NodeId v : world.honest_nodes()) models.push_back(&world.node(v).params);
  const ParamVec avg = mean(std::span<const ParamVec* const>(models));
  return loss(world.spec(), avg, make_batch(world.dataset(), holdout));
}

ExperimentSummary run_experiment(World& world, const ExperimentOptions& options,
                                 const std::function<void(const RoundLog&)>& sink) {
  ExperimentSummary summary;
  sink(world.initial_log());
  const bool track = options.early_stopping.enabled && !world.partition().holdout.empty();
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t t = 1; t <= options.rounds; ++t) {
    RoundLog log = options.engine == EngineKind::kDpsgd ? dpsgd_round(world, t)
                                                       : fedavg_round(world, t);
    sink(log);
    summary.rounds_run = t;
    if (!track) continue;
    const double vl = validation_loss(world);
    summary.validation_loss.push_back(vl);
    if (vl < best) {
      best = vl;
      since_best = 0;
    } else if (++since_best >= options.early_stopping.patience) {
      summary.stopped_early = true;
      break;
    }
  }
  return summary;
}

}  // namespace dlsim
