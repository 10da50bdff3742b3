#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlsim/data.hpp"
#include "dlsim/matrix.hpp"
#include "dlsim/model.hpp"
#include "dlsim/param_vec.hpp"
#include "dlsim/topology.hpp"

namespace dlsim {

enum class EngineKind { kDpsgd, kFedavg };
enum class ScheduleKind { kSynchronous, kRushing };

std::string to_string(EngineKind kind);
std::string to_string(ScheduleKind kind);

// Receiver id used for uploads to the FedAVG server.
inline constexpr NodeId kServerId = std::numeric_limits<NodeId>::max();

// One model update travelling along a directed edge. `seq` orders messages
// within a round: under a rushing schedule every adversary message carries a
// larger seq than every honest one.
struct RoundMessage {
  NodeId sender = 0;
  NodeId receiver = 0;
  std::size_t round = 0;
  std::size_t seq = 0;
  ParamVec update;
};

struct NodeState {
  NodeId id = 0;
  ParamVec params;                 // theta_v^t
  std::vector<std::size_t> shard;  // rows of the dataset, never mutated
  ParamVec velocity;               // momentum buffer, zero when unused
};

// What an active node sees when it must emit its messages. Under a rushing
// schedule `inbox` holds this round's honest updates addressed to it; under a
// synchronous schedule it is empty and the behavior relies on what it
// observed in earlier rounds.
struct ForgeContext {
  NodeId self = 0;
  std::size_t round = 0;
  std::span<const NodeId> neighbors;  // nn(self)
  const std::map<NodeId, ParamVec>& inbox;
  const ParamVec& own_state;
};

// An adversarial role plugged into the engine at the broadcast point. Active
// nodes do not train. The engine only ever hands a behavior messages
// addressed to it.
class Behavior {
 public:
  virtual ~Behavior() = default;
  virtual std::string name() const = 0;
  // Messages keyed by receiver. Neighbors without an entry receive the node's
  // current state so that every directed edge carries exactly one message.
  virtual std::map<NodeId, ParamVec> forge(const ForgeContext& ctx) = 0;
  // Every message addressed to this node in `round`, after delivery.
  virtual void observe(std::size_t round, const std::map<NodeId, ParamVec>& inbox) {
    (void)round;
    (void)inbox;
  }
};

struct WorldConfig {
  ModelSpec spec;
  std::uint64_t seed = 0;
  double lr = 0.1;
  // (round, factor): from that round on the learning rate is multiplied by
  // factor. Factors compound.
  std::vector<std::pair<std::size_t, double>> lr_milestones;
  std::size_t batch_size = 16;
  std::size_t local_steps = 1;
  double momentum = 0.0;
  ScheduleKind schedule = ScheduleKind::kSynchronous;
  std::optional<double> clip_tau;  // self-centered clipping when set
  double noise_sigma = 0.0;
  bool secure_aggregation = false;
  std::size_t sa_threshold = 1;
  bool record_updates = false;
  std::size_t threads = 0;  // 0 or 1: sequential
};

struct NodeRecord {
  NodeId id = 0;
  double train_loss = 0.0;
  std::uint64_t params_hash = 0;
};

// Everything that happened in one round. Rounds are numbered from 1; round t
// takes theta^{t-1} to theta^t. Round 0 is the initial state and carries no
// messages.
struct RoundLog {
  std::size_t round = 0;
  double lr = 0.0;
  double consensus_distance = 0.0;
  std::vector<NodeRecord> per_node;
  // Delivery-ordered message trace. Always captured in memory; persisted
  // only when updates are recorded.
  std::vector<RoundMessage> messages;

  // Out-of-band ground truth for tests and reports. Never visible to
  // behaviors.
  std::map<NodeId, ParamVec> updates;         // theta^{t-1/2} each node emitted
  std::map<NodeId, ParamVec> true_gradients;  // gradient at theta^{t-1}, first local step
  std::map<NodeId, ParamVec> sa_outputs;      // per aggregating node, when SA is on
  std::vector<ParamVec> states;               // theta^t per node
  bool secure_aggregation = false;
};

class World {
 public:
  World(WorldConfig config, std::shared_ptr<const Dataset> dataset, Partition partition,
        Topology topology, const ParamVec& initial_params);

  const WorldConfig& config() const { return config_; }
  const ModelSpec& spec() const { return config_.spec; }
  const Dataset& dataset() const { return *dataset_; }
  const Partition& partition() const { return partition_; }
  const Topology& topology() const { return topology_; }
  const ParamVec& initial_params() const { return initial_params_; }
  std::size_t size() const { return nodes_.size(); }

  std::span<const NodeState> nodes() const { return nodes_; }
  NodeState& node(NodeId v) { return nodes_.at(v); }
  const NodeState& node(NodeId v) const { return nodes_.at(v); }

  // Installs an active role on v.
  void set_behavior(NodeId v, std::unique_ptr<Behavior> behavior);
  Behavior* behavior(NodeId v) const;
  bool is_active(NodeId v) const { return behavior(v) != nullptr; }
  // Honest nodes in id order (passive observers count as honest).
  std::vector<NodeId> honest_nodes() const;

  // v excludes these participants from its own secure aggregation.
  void simulate_sa_dropouts(NodeId v, std::vector<NodeId> dropped);
  std::span<const NodeId> sa_dropouts(NodeId v) const;

  double lr_at(std::size_t round) const;

  // Global model of the FedAVG engine.
  const ParamVec& global_params() const { return global_; }
  void set_global_params(ParamVec p) { global_ = std::move(p); }

  // Snapshot of round 0.
  RoundLog initial_log() const;

  // Mean loss of node v's current params over its own shard.
  double train_loss(NodeId v) const;

 private:
  WorldConfig config_;
  std::shared_ptr<const Dataset> dataset_;
  Partition partition_;
  Topology topology_;
  ParamVec initial_params_;
  std::vector<NodeState> nodes_;
  std::map<NodeId, std::unique_ptr<Behavior>> behaviors_;
  std::map<NodeId, std::vector<NodeId>> sa_dropouts_;
  ParamVec global_;
};

// One round of decentralized parallel SGD: local step(s), exchange with
// nn(v), average over nn(v) (or the configured defense/SA variant).
RoundLog dpsgd_round(World& world, std::size_t round);

// One cross-silo FedAVG round: every user steps from the global model, the
// server averages all n updates, everyone adopts the result.
RoundLog fedavg_round(World& world, std::size_t round);

// Mean pairwise squared distance: sum_v sum_{u != v} ||theta_v - theta_u||^2
// / (|V|^2 - |V|).
double consensus_distance(std::span<const ParamVec> states);

// W^t with W[v][u] = 1/|nn(v)| for u in nn(v). Entry (v, u) is the weight of
// u's round-0 parameters in v's round-t parameters under zero gradients.
Matrix influence_matrix(const Topology& topology, std::size_t rounds);

struct EarlyStopping {
  bool enabled = false;
  std::size_t patience = 3;
};

struct ExperimentOptions {
  EngineKind engine = EngineKind::kDpsgd;
  std::size_t rounds = 0;
  EarlyStopping early_stopping;
};

struct ExperimentSummary {
  std::size_t rounds_run = 0;
  bool stopped_early = false;
  std::vector<double> validation_loss;  // per executed round
};

// Validation loss of the mean of all honest local models over the holdout.
double validation_loss(const World& world);

// Runs up to options.rounds rounds, handing every RoundLog (starting with
// round 0) to `sink`. Stops early when the validation loss has not improved
// for `patience` consecutive rounds.
ExperimentSummary run_experiment(World& world, const ExperimentOptions& options,
                                 const std::function<void(const RoundLog&)>& sink);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must
// write only its own output slot.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace dlsim
