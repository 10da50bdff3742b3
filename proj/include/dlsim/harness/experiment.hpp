#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlsim/data.hpp"
#include "dlsim/harness/config.hpp"
#include "dlsim/param_vec.hpp"
#include "dlsim/protocol.hpp"
#include "dlsim/topology.hpp"

namespace dlsim::harness {

// Everything derived from the seed before round 0. Paired runs share one
// Setup so both engines see the same data, partition, topology and Θ^0.
struct Setup {
  std::shared_ptr<const Dataset> dataset;
  Partition partition;
  Topology topology;
  ModelSpec spec;
  ParamVec initial;
};

Setup make_setup(const ExperimentConfig& cfg);
Topology make_topology(const ExperimentConfig& cfg);

// DLSIM_THREADS, 0 (sequential) when unset.
std::size_t threads_from_env();

WorldConfig world_config(const ExperimentConfig& cfg, const ModelSpec& spec);

// A world for `engine` with the configured active role installed (dpsgd
// only). Passive roles install nothing.
std::unique_ptr<World> make_world(const ExperimentConfig& cfg, const Setup& setup,
                                  EngineKind engine);

// The override payload for one target, drawn from its own named stream.
ParamVec override_payload(const ExperimentConfig& cfg, std::size_t param_count, NodeId target);

// One JSON-lines record. Messages are included when `with_messages`.
nlohmann::json round_record(const RoundLog& log, bool with_messages);

// Hex of a 64-bit hash, zero-padded to 16 digits.
std::string hex64(std::uint64_t h);

struct RunResult {
  std::filesystem::path dir;
  ExperimentSummary summary;
};

// Writes manifest.json (before round 0), rounds.jsonl and summary.json into
// `out_dir`, calling `observer` for every RoundLog as it is produced.
RunResult run_to_dir(const ExperimentConfig& cfg, const Setup& setup, EngineKind engine,
                     const std::filesystem::path& out_dir,
                     const std::function<void(const RoundLog&, const World&)>& observer = {});

// Attack drivers. Each writes report.csv plus the run directories it needs
// under out_dir and returns the report path.
std::filesystem::path attack_mia_passive(const ExperimentConfig& cfg,
                                         const std::filesystem::path& out_dir);
std::filesystem::path attack_gradient_recovery(const ExperimentConfig& cfg,
                                               const std::filesystem::path& out_dir);
std::filesystem::path attack_state_override(const ExperimentConfig& cfg,
                                            const std::filesystem::path& out_dir);
std::filesystem::path attack_echo(const ExperimentConfig& cfg,
                                  const std::filesystem::path& out_dir);
std::filesystem::path attack_sa_evasion(const ExperimentConfig& cfg,
                                        const std::filesystem::path& out_dir);

const std::vector<std::string>& attack_names();
std::filesystem::path run_attack(const std::string& name, const ExperimentConfig& cfg,
                                 const std::filesystem::path& out_dir);

}  // namespace dlsim::harness
