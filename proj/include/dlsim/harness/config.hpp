#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dlsim/model.hpp"
#include "dlsim/protocol.hpp"
#include "dlsim/topology.hpp"

namespace dlsim::harness {

struct DataConfig {
  std::string source = "blobs";  // blobs | csv
  std::size_t n_samples = 600;
  std::size_t input_dim = 10;
  std::size_t num_classes = 4;
  double spread = 1.0;
  std::string path;  // csv only
  double holdout_fraction = 0.2;
};

struct ModelConfig {
  ModelKind kind = ModelKind::kLinearSoftmax;
  std::size_t hidden_dim = 16;
  Activation activation = Activation::kTanh;
};

struct TopologyConfig {
  // chain | torus | complete | star | random-regular | expander | edge-list
  std::string kind = "complete";
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t degree = 0;
  NodeId center = 0;
  std::string path;
};

struct AdversaryConfig {
  // none | passive | echo | state-override | sa-evasion
  std::string role = "none";
  NodeId attacker = 0;
  std::vector<NodeId> victims;
  bool stale = false;            // state-override from last round's updates
  double payload_scale = 1.0;    // std of the random override payloads
  NodeId colluder_b = 0;         // sa-evasion
  bool simulate_dropout = false;  // sa-evasion
};

struct DefenseConfig {
  std::optional<double> clip_tau;
  double noise_sigma = 0.0;
  bool secure_aggregation = false;
  std::size_t sa_threshold = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  std::size_t n_users = 0;
  TopologyConfig topology;
  EngineKind engine = EngineKind::kDpsgd;
  double lr = 0.0;
  std::vector<std::pair<std::size_t, double>> lr_milestones;
  std::size_t batch_size = 16;
  std::size_t local_steps = 1;
  double momentum = 0.0;
  std::size_t rounds = 0;
  ScheduleKind schedule = ScheduleKind::kSynchronous;
  EarlyStopping early_stopping{true, 3};
  AdversaryConfig adversary;
  DefenseConfig defense;
  bool record_updates = false;

  // The validated input document, used for the manifest and the hash.
  nlohmann::json source;
  // Directory relative data/topology paths were resolved against.
  std::filesystem::path base_dir;
};

// Validates the document and returns the typed config. Every problem is
// collected first and reported in one ConfigError, one line per issue,
// each starting with the JSON pointer of the offending value.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
// Makes relative data/topology paths relative to `base`.
void resolve_paths(ExperimentConfig& cfg, const std::filesystem::path& base);

// Sorted keys, no insignificant whitespace.
std::string canonical_json(const nlohmann::json& doc);
// Git blob id (SHA-1 of "blob <len>\0" + canonical JSON), hex.
std::string config_hash(const nlohmann::json& doc);

}  // namespace dlsim::harness
