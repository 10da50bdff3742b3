#include "dlsim/harness/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dlsim/errors.hpp"

namespace dlsim::harness {

using nlohmann::json;

namespace {

bool is_nonneg_int(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::string join_ptr(const std::string& base, const std::string& key) {
  return base + "/" + key;
}

// Collects every problem instead of stopping at the first one.
class Checker {
 public:
  void fail(const std::string& ptr, const std::string& msg) {
    errors_.push_back((ptr.empty() ? "/" : ptr) + ": " + msg);
  }
  bool ok() const { return errors_.empty(); }
  const std::vector<std::string>& errors() const { return errors_; }

  // Returns the member or nullptr; reports a missing required key.
  const json* member(const json& obj, const std::string& base, const std::string& key,
                     bool required) {
    if (!obj.is_object()) return nullptr;
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
      if (required) fail(join_ptr(base, key), "required key missing");
      return nullptr;
    }
    return &*it;
  }

  bool object(const json& v, const std::string& ptr) {
    if (v.is_object()) return true;
    fail(ptr, "expected an object");
    return false;
  }

  void known_keys(const json& obj, const std::string& base,
                  std::initializer_list<const char*> keys) {
    if (!obj.is_object()) return;
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, _] : obj.items()) {
      if (allowed.count(k) == 0) fail(join_ptr(base, k), "unknown key");
    }
  }

  template <class T>
  void read_uint(const json& obj, const std::string& base, const std::string& key, T& out,
                 bool required, std::uint64_t min = 0) {
    const json* v = member(obj, base, key, required);
    if (v == nullptr) return;
    if (!is_nonneg_int(*v)) {
      fail(join_ptr(base, key), "expected a non-negative integer");
      return;
    }
    const auto x = v->get<std::uint64_t>();
    if (x < min) {
      fail(join_ptr(base, key), "must be >= " + std::to_string(min));
      return;
    }
    out = static_cast<T>(x);
  }

  void read_number(const json& obj, const std::string& base, const std::string& key,
                   double& out, bool required) {
    const json* v = member(obj, base, key, required);
    if (v == nullptr) return;
    if (!v->is_number() || !std::isfinite(v->get<double>())) {
      fail(join_ptr(base, key), "expected a finite number");
      return;
    }
    out = v->get<double>();
  }

  void read_bool(const json& obj, const std::string& base, const std::string& key, bool& out) {
    const json* v = member(obj, base, key, false);
    if (v == nullptr) return;
    if (!v->is_boolean()) {
      fail(join_ptr(base, key), "expected true or false");
      return;
    }
    out = v->get<bool>();
  }

  void read_string(const json& obj, const std::string& base, const std::string& key,
                   std::string& out, bool required) {
    const json* v = member(obj, base, key, required);
    if (v == nullptr) return;
    if (!v->is_string()) {
      fail(join_ptr(base, key), "expected a string");
      return;
    }
    out = v->get<std::string>();
  }

  void read_enum(const json& obj, const std::string& base, const std::string& key,
                 std::string& out, std::initializer_list<const char*> options, bool required) {
    std::string s = out;
    const std::size_t before = errors_.size();
    read_string(obj, base, key, s, required);
    if (errors_.size() != before || obj.find(key) == obj.end()) return;
    if (std::find(options.begin(), options.end(), s) == options.end()) {
      std::string list;
      for (const char* o : options) list += (list.empty() ? "" : "|") + std::string(o);
      fail(join_ptr(base, key), "expected one of " + list + ", got \"" + s + "\"");
      return;
    }
    out = s;
  }

 private:
  std::vector<std::string> errors_;
};

void parse_model(Checker& c, const json& doc, ExperimentConfig& cfg) {
  const json* m = c.member(doc, "", "model", false);
  if (m == nullptr || !c.object(*m, "/model")) return;
  c.known_keys(*m, "/model", {"kind", "hidden_dim", "activation"});
  std::string kind = "linear-softmax";
  c.read_enum(*m, "/model", "kind", kind, {"linear-softmax", "mlp-1-hidden"}, false);
  cfg.model.kind = kind == "mlp-1-hidden" ? ModelKind::kMlp1Hidden : ModelKind::kLinearSoftmax;
  c.read_uint(*m, "/model", "hidden_dim", cfg.model.hidden_dim, false, 1);
  std::string act = "tanh";
  c.read_enum(*m, "/model", "activation", act, {"tanh", "relu"}, false);
  cfg.model.activation = act == "relu" ? Activation::kRelu : Activation::kTanh;
}

void parse_data(Checker& c, const json& doc, ExperimentConfig& cfg) {
  const json* d = c.member(doc, "", "data", false);
  if (d == nullptr || !c.object(*d, "/data")) return;
  c.known_keys(*d, "/data",
               {"source", "n_samples", "input_dim", "num_classes", "spread", "path",
                "holdout_fraction"});
  auto& dc = cfg.data;
  c.read_enum(*d, "/data", "source", dc.source, {"blobs", "csv"}, false);
  c.read_uint(*d, "/data", "n_samples", dc.n_samples, false, 2);
  c.read_uint(*d, "/data", "input_dim", dc.input_dim, false, 1);
  c.read_uint(*d, "/data", "num_classes", dc.num_classes, false, 2);
  c.read_number(*d, "/data", "spread", dc.spread, false);
  c.read_string(*d, "/data", "path", dc.path, dc.source == "csv");
  c.read_number(*d, "/data", "holdout_fraction", dc.holdout_fraction, false);
  if (!(dc.spread > 0.0)) c.fail("/data/spread", "must be > 0");
  if (dc.holdout_fraction < 0.0 || dc.holdout_fraction >= 1.0) {
    c.fail("/data/holdout_fraction", "must be in [0, 1)");
  }
  if (dc.source == "blobs" && dc.n_samples < dc.num_classes) {
    c.fail("/data/n_samples", "must be >= num_classes");
  }
}

void parse_topology(Checker& c, const json& doc, ExperimentConfig& cfg) {
  const json* t = c.member(doc, "", "topology", true);
  if (t == nullptr || !c.object(*t, "/topology")) return;
  c.known_keys(*t, "/topology", {"kind", "rows", "cols", "degree", "center", "path"});
  auto& tc = cfg.topology;
  c.read_enum(*t, "/topology", "kind", tc.kind,
              {"chain", "torus", "complete", "star", "random-regular", "expander", "edge-list"},
              true);
  if (tc.kind == "torus") {
    c.read_uint(*t, "/topology", "rows", tc.rows, true, 3);
    c.read_uint(*t, "/topology", "cols", tc.cols, true, 3);
    if (tc.rows * tc.cols != cfg.n_users && tc.rows != 0 && tc.cols != 0) {
      c.fail("/topology", "rows*cols = " + std::to_string(tc.rows * tc.cols) +
                              " does not match n_users = " + std::to_string(cfg.n_users));
    }
  } else if (tc.kind == "random-regular") {
    c.read_uint(*t, "/topology", "degree", tc.degree, true, 2);
    if (tc.degree >= cfg.n_users && cfg.n_users > 0) {
      c.fail("/topology/degree", "must be < n_users");
    } else if ((tc.degree * cfg.n_users) % 2 != 0) {
      c.fail("/topology/degree", "n_users * degree must be even");
    }
  } else if (tc.kind == "star") {
    c.read_uint(*t, "/topology", "center", tc.center, false);
    if (tc.center >= cfg.n_users && cfg.n_users > 0) {
      c.fail("/topology/center", "out of range");
    }
  } else if (tc.kind == "edge-list") {
    c.read_string(*t, "/topology", "path", tc.path, true);
  } else if (tc.kind == "expander" && cfg.n_users < 4 && cfg.n_users > 0) {
    c.fail("/n_users", "expander needs at least 4 users");
  }
}

void parse_adversary(Checker& c, const json& doc, ExperimentConfig& cfg) {
  const json* a = c.member(doc, "", "adversary", false);
  if (a == nullptr || !c.object(*a, "/adversary")) return;
  c.known_keys(*a, "/adversary",
               {"role", "attacker", "victims", "stale", "payload_scale", "colluder_b",
                "simulate_dropout"});
  auto& ac = cfg.adversary;
  c.read_enum(*a, "/adversary", "role", ac.role,
              {"none", "passive", "echo", "state-override", "sa-evasion"}, true);
  if (ac.role == "none") return;
  c.read_uint(*a, "/adversary", "attacker", ac.attacker, true);
  if (ac.attacker >= cfg.n_users && cfg.n_users > 0) {
    c.fail("/adversary/attacker", "out of range for n_users = " + std::to_string(cfg.n_users));
  }
  if (const json* v = c.member(*a, "/adversary", "victims", ac.role == "echo" ||
                                                                ac.role == "state-override" ||
                                                                ac.role == "sa-evasion")) {
    if (!v->is_array()) {
      c.fail("/adversary/victims", "expected an array of node ids");
    } else {
      for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string ptr = "/adversary/victims/" + std::to_string(i);
        const json& e = (*v)[i];
        if (!is_nonneg_int(e)) {
          c.fail(ptr, "expected a non-negative integer");
          continue;
        }
        const auto id = e.get<std::uint64_t>();
        if (id >= cfg.n_users && cfg.n_users > 0) c.fail(ptr, "out of range");
        if (id == ac.attacker) c.fail(ptr, "victim equals the attacker");
        ac.victims.push_back(static_cast<NodeId>(id));
      }
      if ((ac.role == "echo" || ac.role == "sa-evasion") && ac.victims.size() != 1) {
        c.fail("/adversary/victims", ac.role + " takes exactly one victim");
      }
      if (ac.role == "state-override" && ac.victims.empty()) {
        c.fail("/adversary/victims", "state-override needs at least one target");
      }
    }
  }
  c.read_bool(*a, "/adversary", "stale", ac.stale);
  c.read_number(*a, "/adversary", "payload_scale", ac.payload_scale, false);
  if (!(ac.payload_scale > 0.0)) c.fail("/adversary/payload_scale", "must be > 0");
  if (ac.role == "sa-evasion") {
    c.read_uint(*a, "/adversary", "colluder_b", ac.colluder_b, true);
    if (ac.colluder_b >= cfg.n_users && cfg.n_users > 0) {
      c.fail("/adversary/colluder_b", "out of range");
    }
    c.read_bool(*a, "/adversary", "simulate_dropout", ac.simulate_dropout);
  }
}

void parse_defense(Checker& c, const json& doc, ExperimentConfig& cfg) {
  const json* d = c.member(doc, "", "defense", false);
  if (d == nullptr || !c.object(*d, "/defense")) return;
  c.known_keys(*d, "/defense", {"clipping", "noise", "secure_aggregation"});
  auto& dc = cfg.defense;
  if (const json* clip = c.member(*d, "/defense", "clipping", false)) {
    if (c.object(*clip, "/defense/clipping")) {
      c.known_keys(*clip, "/defense/clipping", {"tau"});
      double tau = 0.0;
      const std::size_t before = c.errors().size();
      c.read_number(*clip, "/defense/clipping", "tau", tau, true);
      if (c.errors().size() == before) {
        if (tau < 0.0) {
          c.fail("/defense/clipping/tau", "must be >= 0");
        } else {
          dc.clip_tau = tau;
        }
      }
    }
  }
  if (const json* noise = c.member(*d, "/defense", "noise", false)) {
    if (c.object(*noise, "/defense/noise")) {
      c.known_keys(*noise, "/defense/noise", {"sigma"});
      c.read_number(*noise, "/defense/noise", "sigma", dc.noise_sigma, true);
      if (dc.noise_sigma < 0.0) c.fail("/defense/noise/sigma", "must be >= 0");
    }
  }
  if (const json* sa = c.member(*d, "/defense", "secure_aggregation", false)) {
    if (c.object(*sa, "/defense/secure_aggregation")) {
      c.known_keys(*sa, "/defense/secure_aggregation", {"enabled", "threshold"});
      c.read_bool(*sa, "/defense/secure_aggregation", "enabled", dc.secure_aggregation);
      c.read_uint(*sa, "/defense/secure_aggregation", "threshold", dc.sa_threshold, false, 1);
    }
  }
  if (dc.secure_aggregation && dc.clip_tau) {
    c.fail("/defense", "secure_aggregation and clipping cannot be combined");
  }
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  Checker c;
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ConfigError("/: config must be a JSON object");
  c.known_keys(doc, "",
               {"seed", "model", "data", "n_users", "topology", "engine", "lr", "lr_milestones",
                "batch_size", "local_steps", "momentum", "rounds", "schedule", "early_stopping",
                "adversary", "defense", "capture"});

  c.read_uint(doc, "", "seed", cfg.seed, true);
  c.read_uint(doc, "", "n_users", cfg.n_users, true, 1);
  std::string engine = "dpsgd";
  c.read_enum(doc, "", "engine", engine, {"dpsgd", "fedavg"}, false);
  cfg.engine = engine == "fedavg" ? EngineKind::kFedavg : EngineKind::kDpsgd;
  c.read_number(doc, "", "lr", cfg.lr, true);
  if (doc.contains("lr") && doc["lr"].is_number() && !(cfg.lr > 0.0)) c.fail("/lr", "must be > 0");
  if (const json* ms = c.member(doc, "", "lr_milestones", false)) {
    if (!ms->is_array()) {
      c.fail("/lr_milestones", "expected an array of [round, factor] pairs");
    } else {
      for (std::size_t i = 0; i < ms->size(); ++i) {
        const json& e = (*ms)[i];
        const std::string ptr = "/lr_milestones/" + std::to_string(i);
        if (!e.is_array() || e.size() != 2 || !is_nonneg_int(e[0]) || !e[1].is_number() ||
            e[1].get<double>() < 0.0) {
          c.fail(ptr, "expected [round >= 0, factor >= 0]");
          continue;
        }
        cfg.lr_milestones.emplace_back(e[0].get<std::size_t>(), e[1].get<double>());
      }
    }
  }
  c.read_uint(doc, "", "batch_size", cfg.batch_size, false, 1);
  c.read_uint(doc, "", "local_steps", cfg.local_steps, false, 1);
  c.read_number(doc, "", "momentum", cfg.momentum, false);
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) c.fail("/momentum", "must be in [0, 1)");
  c.read_uint(doc, "", "rounds", cfg.rounds, true);
  std::string schedule = "synchronous";
  c.read_enum(doc, "", "schedule", schedule, {"synchronous", "rushing"}, false);
  cfg.schedule = schedule == "rushing" ? ScheduleKind::kRushing : ScheduleKind::kSynchronous;
  if (const json* es = c.member(doc, "", "early_stopping", false)) {
    if (c.object(*es, "/early_stopping")) {
      c.known_keys(*es, "/early_stopping", {"enabled", "patience"});
      c.read_bool(*es, "/early_stopping", "enabled", cfg.early_stopping.enabled);
      c.read_uint(*es, "/early_stopping", "patience", cfg.early_stopping.patience, false, 1);
    }
  }
  if (const json* cap = c.member(doc, "", "capture", false)) {
    if (c.object(*cap, "/capture")) {
      c.known_keys(*cap, "/capture", {"record_updates"});
      c.read_bool(*cap, "/capture", "record_updates", cfg.record_updates);
    }
  }

  parse_model(c, doc, cfg);
  parse_data(c, doc, cfg);
  parse_topology(c, doc, cfg);
  parse_adversary(c, doc, cfg);
  parse_defense(c, doc, cfg);

  if (cfg.data.source == "blobs" && cfg.n_users > 0 &&
      cfg.data.n_samples < cfg.n_users) {
    c.fail("/data/n_samples", "fewer samples than users");
  }
  if (doc.contains("n_users") && cfg.n_users < 2 && cfg.engine == EngineKind::kDpsgd) {
    c.fail("/n_users", "dpsgd needs at least 2 users");
  }
  const std::string& role = cfg.adversary.role;
  if (cfg.engine == EngineKind::kFedavg && (role == "echo" || role == "state-override")) {
    c.fail("/adversary/role", "active roles need engine = dpsgd");
  }
  if (role == "sa-evasion" && !cfg.defense.secure_aggregation) {
    c.fail("/defense/secure_aggregation/enabled", "sa-evasion needs secure aggregation");
  }

  if (!c.ok()) {
    std::string msg;
    for (const auto& e : c.errors()) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
  cfg.source = doc;
  return cfg;
}

void resolve_paths(ExperimentConfig& cfg, const std::filesystem::path& base) {
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) {
      p = (base / p).lexically_normal().string();
    }
  };
  resolve(cfg.data.path);
  resolve(cfg.topology.path);
  cfg.base_dir = base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("/: " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig cfg = parse_config(doc);
  resolve_paths(cfg, std::filesystem::absolute(path).parent_path());
  return cfg;
}

std::string canonical_json(const json& doc) {
  // nlohmann::json objects are std::map-backed, so keys come out sorted.
  return doc.dump();
}

std::string config_hash(const json& doc) {
  const std::string body = canonical_json(doc);
  const std::string blob = "blob " + std::to_string(body.size()) + '\0' + body;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::ostringstream hex;
  static const char* kHex = "0123456789abcdef";
  for (unsigned int i = 0; i < len; ++i) hex << kHex[digest[i] >> 4] << kHex[digest[i] & 15];
  return hex.str();
}

}  // namespace dlsim::harness
