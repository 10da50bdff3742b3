#include "dlsim/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "dlsim/adversary.hpp"
#include "dlsim/behaviors.hpp"
#include "dlsim/errors.hpp"
#include "dlsim/kernels.hpp"
#include "dlsim/model.hpp"
#include "dlsim/rng.hpp"

namespace dlsim::harness {

using nlohmann::json;
namespace fs = std::filesystem;

Topology make_topology(const ExperimentConfig& cfg) {
  const auto& t = cfg.topology;
  const std::size_t n = cfg.n_users;
  Rng rng(cfg.seed, stream_id(Stream::kTopology));
  Topology topo = [&] {
    try {
      if (t.kind == "chain") return chain(n);
      if (t.kind == "torus") return torus(t.rows, t.cols);
      if (t.kind == "complete") return complete(n);
      if (t.kind == "star") return star(n, t.center);
      if (t.kind == "random-regular") return random_regular(rng, n, t.degree);
      if (t.kind == "expander") return expander(rng, n);
      return from_edge_list(t.path);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("/topology: ") + e.what());
    }
  }();
  if (topo.size() != n) {
    throw ConfigError("/topology: graph has " + std::to_string(topo.size()) +
                      " nodes but n_users = " + std::to_string(n));
  }
  return topo;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<NodeId> default_victims(const ExperimentConfig& cfg, const Topology& topo) {
  if (!cfg.adversary.victims.empty()) return cfg.adversary.victims;
  std::vector<NodeId> out;
  for (NodeId u : topo.neighbors(cfg.adversary.attacker)) {
    if (u != cfg.adversary.attacker) out.push_back(u);
  }
  return out;
}

void require_role(const ExperimentConfig& cfg, const std::string& role,
                  const std::string& attack) {
  if (cfg.adversary.role != role) {
    throw PreconditionError(attack + " needs adversary.role = \"" + role + "\", config has \"" +
                            cfg.adversary.role + "\"");
  }
}

}  // namespace

std::size_t threads_from_env() {
  const char* env = std::getenv("DLSIM_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0') {
    throw ConfigError("DLSIM_THREADS must be a non-negative integer, got \"" +
                      std::string(env) + "\"");
  }
  return static_cast<std::size_t>(v);
}

Setup make_setup(const ExperimentConfig& cfg) {
  Rng data_rng(cfg.seed, stream_id(Stream::kData));
  Dataset ds = cfg.data.source == "csv"
                   ? load_csv(cfg.data.path)
                   : make_blobs(data_rng, cfg.data.n_samples, cfg.data.input_dim,
                                cfg.data.num_classes, cfg.data.spread);
  const ModelSpec spec =
      cfg.model.kind == ModelKind::kMlp1Hidden
          ? ModelSpec::mlp(ds.input_dim(), cfg.model.hidden_dim, ds.num_classes(),
                           cfg.model.activation)
          : ModelSpec::linear(ds.input_dim(), ds.num_classes());

  Rng part_rng(cfg.seed, stream_id(Stream::kPartition));
  Partition partition = [&] {
    try {
      return partition_uniform(part_rng, ds, cfg.n_users, cfg.data.holdout_fraction);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("/data: ") + e.what());
    }
  }();
  Topology topo = make_topology(cfg);
  Rng init_rng(cfg.seed, stream_id(Stream::kInit));
  ParamVec initial = init_params(spec, init_rng);
  return {std::make_shared<const Dataset>(std::move(ds)), std::move(partition),
          std::move(topo), spec, std::move(initial)};
}

WorldConfig world_config(const ExperimentConfig& cfg, const ModelSpec& spec) {
  WorldConfig wc;
  wc.spec = spec;
  wc.seed = cfg.seed;
  wc.lr = cfg.lr;
  wc.lr_milestones = cfg.lr_milestones;
  wc.batch_size = cfg.batch_size;
  wc.local_steps = cfg.local_steps;
  wc.momentum = cfg.momentum;
  wc.schedule = cfg.schedule;
  wc.clip_tau = cfg.defense.clip_tau;
  wc.noise_sigma = cfg.defense.noise_sigma;
  wc.secure_aggregation = cfg.defense.secure_aggregation;
  wc.sa_threshold = cfg.defense.sa_threshold;
  wc.record_updates = cfg.record_updates;
  wc.threads = threads_from_env();
  return wc;
}

ParamVec override_payload(const ExperimentConfig& cfg, std::size_t param_count, NodeId target) {
  Rng rng(cfg.seed, stream_id(Stream::kPayload, target));
  ParamVec p(param_count);
  for (double& x : p.mutable_values()) x = cfg.adversary.payload_scale * rng.normal();
  return p;
}

std::unique_ptr<World> make_world(const ExperimentConfig& cfg, const Setup& setup,
                                  EngineKind engine) {
  auto world = std::make_unique<World>(world_config(cfg, setup.spec), setup.dataset,
                                       setup.partition, setup.topology, setup.initial);
  if (engine != EngineKind::kDpsgd) return world;
  const auto& adv = cfg.adversary;
  const auto& topo = setup.topology;
  if (adv.role == "echo") {
    world->set_behavior(adv.attacker,
                        std::make_unique<EchoBehavior>(topo, adv.attacker, adv.victims.at(0)));
  } else if (adv.role == "state-override") {
    if (!adv.stale && cfg.schedule != ScheduleKind::kRushing) {
      throw PreconditionError(
          "exact state-override needs schedule = rushing (or adversary.stale = true)");
    }
    std::vector<OverridePayload> payloads;
    for (NodeId v : adv.victims) {
      payloads.push_back({v, override_payload(cfg, setup.spec.param_count(), v)});
    }
    world->set_behavior(adv.attacker, std::make_unique<StateOverrideBehavior>(
                                          topo, adv.attacker, std::move(payloads), adv.stale));
  } else if (adv.role == "sa-evasion") {
    const SaEvasionSetup s{adv.attacker, adv.colluder_b, adv.victims.at(0), adv.simulate_dropout};
    check_sa_evasion(topo, s, cfg.defense.sa_threshold);
    if (s.simulate_dropout) world->simulate_sa_dropouts(s.colluder_b, {s.victim});
  }
  return world;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json round_record(const RoundLog& log, bool with_messages) {
  json rec;
  rec["round"] = log.round;
  rec["lr"] = log.lr;
  rec["consensus_distance"] = log.consensus_distance;
  json nodes = json::array();
  for (const auto& r : log.per_node) {
    nodes.push_back({{"id", r.id}, {"train_loss", r.train_loss}, {"params_hash", hex64(r.params_hash)}});
  }
  rec["per_node"] = std::move(nodes);
  if (with_messages) {
    json msgs = json::array();
    for (const auto& m : log.messages) {
      json j{{"sender", m.sender}, {"seq", m.seq}, {"update", m.update.values()}};
      if (m.receiver == kServerId) {
        j["receiver"] = "server";
      } else {
        j["receiver"] = m.receiver;
      }
      msgs.push_back(std::move(j));
    }
    rec["messages"] = std::move(msgs);
  }
  return rec;
}

RunResult run_to_dir(const ExperimentConfig& cfg, const Setup& setup, EngineKind engine,
                     const fs::path& out_dir,
                     const std::function<void(const RoundLog&, const World&)>& observer) {
  ensure_dir(out_dir);
  auto world = make_world(cfg, setup, engine);

  json manifest;
  manifest["config"] = cfg.source;
  manifest["config_hash"] = config_hash(cfg.source);
  manifest["config_dir"] = cfg.base_dir.string();
  manifest["start_time"] = utc_now();
  manifest["engine"] = to_string(engine);
  manifest["partition_hash"] = hex64(setup.partition.hash());
  manifest["initial_params_hash"] = hex64(fnv1a64(setup.initial));
  manifest["topology"] = {{"nodes", setup.topology.size()}, {"edges", setup.topology.edge_count()}};
  manifest["model"] = {{"kind", to_string(setup.spec.kind)},
                       {"param_count", setup.spec.param_count()}};
  manifest["simd"] = std::string(kernels::isa_name(kernels::active().isa));
  manifest["files"] = {"manifest.json", "rounds.jsonl", "summary.json"};
  write_json(out_dir / "manifest.json", manifest);

  const fs::path rounds_path = out_dir / "rounds.jsonl";
  auto rounds = open_out(rounds_path);
  const World& view = *world;
  auto sink = [&](const RoundLog& log) {
    rounds << round_record(log, cfg.record_updates).dump() << '\n';
    if (!rounds) throw IoError("write failed for " + rounds_path.string());
    if (observer) observer(log, view);
  };
  const ExperimentOptions opts{engine, cfg.rounds, cfg.early_stopping};
  RunResult result{out_dir, run_experiment(*world, opts, sink)};
  rounds.close();

  json summary;
  summary["rounds_run"] = result.summary.rounds_run;
  summary["stopped_early"] = result.summary.stopped_early;
  summary["validation_loss"] = result.summary.validation_loss;
  if (!setup.partition.holdout.empty()) {
    std::vector<const ParamVec*> models;
    for (NodeId v : world->honest_nodes()) models.push_back(&world->node(v).params);
    const ParamVec avg = mean(std::span<const ParamVec* const>(models));
    const Batch hold = make_batch(*setup.dataset, setup.partition.holdout);
    summary["final"] = {{"mean_model_holdout_loss", loss(setup.spec, avg, hold)},
                        {"mean_model_holdout_accuracy",
                         accuracy(setup.spec, avg, hold.inputs, hold.labels)}};
  }
  write_json(out_dir / "summary.json", summary);
  return result;
}

// ---- attacks ----------------------------------------------------------------

fs::path attack_mia_passive(const ExperimentConfig& cfg, const fs::path& out_dir) {
  if (!cfg.record_updates) {
    throw PreconditionError(
        "mia-passive needs captured updates: set capture.record_updates = true or pass "
        "--record-updates");
  }
  require_role(cfg, "passive", "mia-passive");
  const Setup setup = make_setup(cfg);
  const NodeId attacker = cfg.adversary.attacker;
  ObservedHistory history(attacker, setup.topology.neighbors(attacker), setup.initial);

  PassiveMiaInputs in;
  in.spec = &setup.spec;
  in.data = setup.dataset.get();
  in.partition = &setup.partition;
  in.seed = cfg.seed;
  in.victims = default_victims(cfg, setup.topology);
  in.history = &history;
  for (NodeId v : in.victims) {
    if (!setup.topology.adjacent(attacker, v)) {
      throw PreconditionError("victim " + std::to_string(v) + " is not a neighbor of A");
    }
  }

  run_to_dir(cfg, setup, EngineKind::kDpsgd, out_dir / "dl",
             [&](const RoundLog& log, const World&) {
               history.record(log);
               in.consensus[log.round] = log.consensus_distance;
             });
  run_to_dir(cfg, setup, EngineKind::kFedavg, out_dir / "fl",
             [&](const RoundLog& log, const World& w) {
               if (log.round > 0) in.fl_global[log.round] = w.global_params();
             });
  const AttackReport report = passive_mia_experiment(in);
  const fs::path path = out_dir / "report.csv";
  report.write_csv(path);
  return path;
}

fs::path attack_gradient_recovery(const ExperimentConfig& cfg, const fs::path& out_dir) {
  require_role(cfg, "passive", "gradient-recovery");
  if (cfg.engine != EngineKind::kDpsgd) {
    throw PreconditionError("gradient-recovery needs engine = dpsgd");
  }
  const Setup setup = make_setup(cfg);
  const auto& topo = setup.topology;
  const NodeId attacker = cfg.adversary.attacker;
  std::vector<NodeId> victims;
  if (!cfg.adversary.victims.empty()) {
    for (NodeId v : cfg.adversary.victims) {
      if (!topo.covers(attacker, v)) {
        throw PreconditionError("victim " + std::to_string(v) +
                                " not fully observable: nn(v) ⊄ nn(A)");
      }
    }
    victims = cfg.adversary.victims;
  } else {
    for (NodeId v = 0; v < topo.size(); ++v) {
      if (v != attacker && topo.covers(attacker, v)) victims.push_back(v);
    }
    if (victims.empty()) {
      throw PreconditionError("no victim is fully observable: nn(v) ⊄ nn(A) for every v");
    }
  }

  ObservedHistory history(attacker, topo.neighbors(attacker), setup.initial);
  const fs::path path = out_dir / "report.csv";
  ensure_dir(out_dir);
  auto out = open_out(path);
  out << "round,victim,max_abs_error,gradient_norm,pseudo\n";
  run_to_dir(cfg, setup, EngineKind::kDpsgd, out_dir / "run",
             [&](const RoundLog& log, const World&) {
               history.record(log);
               if (log.round == 0) return;
               for (NodeId v : victims) {
                 const auto rg = recover_gradient(history, v, topo.neighbors(v), log.round,
                                                  log.lr, cfg.local_steps);
                 const ParamVec& truth = log.true_gradients.at(v);
                 out << log.round << ',' << v << ',' << num(max_abs_diff(rg.gradient, truth))
                     << ',' << num(l2_norm(truth)) << ',' << (rg.pseudo ? 1 : 0) << '\n';
               }
             });
  if (!out) throw IoError("write failed for " + path.string());
  return path;
}

fs::path attack_state_override(const ExperimentConfig& cfg, const fs::path& out_dir) {
  require_role(cfg, "state-override", "state-override");
  const Setup setup = make_setup(cfg);
  std::map<NodeId, ParamVec> payloads;
  for (NodeId v : cfg.adversary.victims) {
    payloads[v] = override_payload(cfg, setup.spec.param_count(), v);
  }
  const fs::path path = out_dir / "report.csv";
  ensure_dir(out_dir);

  // Control compares against the same seed run with a passive attacker.
  std::map<std::size_t, std::map<NodeId, ParamVec>> baseline;
  ExperimentConfig passive = cfg;
  passive.adversary.role = "passive";
  run_to_dir(passive, setup, EngineKind::kDpsgd, out_dir / "baseline",
             [&](const RoundLog& log, const World&) {
               for (const auto& [v, payload] : payloads) {
                 baseline[log.round].emplace(v, log.states.at(v));
               }
             });

  auto out = open_out(path);
  out << "round,victim,max_abs_error,control\n";
  run_to_dir(cfg, setup, EngineKind::kDpsgd, out_dir / "run",
             [&](const RoundLog& log, const World&) {
               if (log.round == 0) return;
               const auto base = baseline.find(log.round);
               for (const auto& [v, payload] : payloads) {
                 const ParamVec& state = log.states.at(v);
                 out << log.round << ',' << v << ',' << num(max_abs_diff(state, payload)) << ',';
                 if (base == baseline.end()) {
                   out << '\n';
                   continue;
                 }
                 out << num(override_control(state, base->second.at(v), payload)) << '\n';
               }
             });
  if (!out) throw IoError("write failed for " + path.string());
  return path;
}

fs::path attack_echo(const ExperimentConfig& cfg, const fs::path& out_dir) {
  require_role(cfg, "echo", "echo");
  const Setup setup = make_setup(cfg);
  const NodeId attacker = cfg.adversary.attacker;
  const NodeId victim = cfg.adversary.victims.at(0);
  const auto& data = *setup.dataset;
  const auto& holdout = setup.partition.holdout;
  const auto victim_outs = sample_nonmembers(cfg.seed, victim, holdout,
                                             setup.partition.shards.at(victim).size());

  const fs::path path = out_dir / "report.csv";
  ensure_dir(out_dir);
  auto out = open_out(path);
  out << "run,round,victim_generalization_error,nontarget_generalization_error,victim_mia\n";
  auto observe = [&](const std::string& run) {
    return [&, run](const RoundLog& log, const World&) {
      if (log.round == 0) return;
      double others = 0.0;
      std::size_t count = 0;
      for (const auto& [v, update] : log.updates) {
        if (v == attacker || v == victim) continue;
        others += generalization_error(setup.spec, update, data, setup.partition.shards[v],
                                       holdout);
        ++count;
      }
      const ParamVec& vu = log.updates.at(victim);
      const auto& members = setup.partition.shards[victim];
      out << run << ',' << log.round << ','
          << num(generalization_error(setup.spec, vu, data, members, holdout)) << ','
          << num(others / static_cast<double>(count)) << ','
          << num(mia_accuracy(setup.spec, vu, data, members, victim_outs)) << '\n';
    };
  };
  run_to_dir(cfg, setup, EngineKind::kDpsgd, out_dir / "echo", observe("echo"));
  ExperimentConfig passive = cfg;
  passive.adversary.role = "passive";
  run_to_dir(passive, setup, EngineKind::kDpsgd, out_dir / "passive", observe("passive"));
  if (!out) throw IoError("write failed for " + path.string());
  return path;
}

fs::path attack_sa_evasion(const ExperimentConfig& cfg, const fs::path& out_dir) {
  require_role(cfg, "sa-evasion", "sa-evasion");
  const Setup setup = make_setup(cfg);
  const auto& topo = setup.topology;
  const NodeId a = cfg.adversary.attacker;
  const NodeId b = cfg.adversary.colluder_b;
  const NodeId victim = cfg.adversary.victims.at(0);
  ObservedHistory ha(a, topo.neighbors(a), setup.initial);
  ObservedHistory hb(b, topo.neighbors(b), setup.initial);

  const fs::path path = out_dir / "report.csv";
  ensure_dir(out_dir);
  auto out = open_out(path);
  out << "round,victim,max_abs_error\n";
  run_to_dir(cfg, setup, EngineKind::kDpsgd, out_dir / "run",
             [&](const RoundLog& log, const World&) {
               if (log.round == 0) return;
               ha.record(log);
               hb.record(log);
               const ParamVec recovered = sa_evasion(ha, hb, log.round);
               out << log.round << ',' << victim << ','
                   << num(max_abs_diff(recovered, log.updates.at(victim))) << '\n';
             });
  if (!out) throw IoError("write failed for " + path.string());
  return path;
}

const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names{"mia-passive", "gradient-recovery",
                                              "state-override", "echo", "sa-evasion"};
  return names;
}

fs::path run_attack(const std::string& name, const ExperimentConfig& cfg,
                    const fs::path& out_dir) {
  if (name == "mia-passive") return attack_mia_passive(cfg, out_dir);
  if (name == "gradient-recovery") return attack_gradient_recovery(cfg, out_dir);
  if (name == "state-override") return attack_state_override(cfg, out_dir);
  if (name == "echo") return attack_echo(cfg, out_dir);
  if (name == "sa-evasion") return attack_sa_evasion(cfg, out_dir);
  std::string known;
  for (const auto& n : attack_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown attack \"" + name + "\" (known: " + known + ")");
}

}  // namespace dlsim::harness
