#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlsim/data.hpp"
#include "dlsim/model.hpp"
#include "dlsim/param_vec.hpp"
#include "dlsim/protocol.hpp"
#include "dlsim/topology.hpp"

namespace dlsim {

// What a (passive) node A legitimately knows: its neighbor set, the common
// initial parameters, its own broadcast updates and every update addressed to
// it. Rounds are keyed 1..T as in RoundLog.
class ObservedHistory {
 public:
  ObservedHistory(NodeId observer, std::span<const NodeId> neighbors, ParamVec initial);

  // Pulls the messages addressed to the observer out of a round log, plus the
  // observer's own update. Under secure aggregation only the observer's own
  // SA output is kept.
  void record(const RoundLog& log);
  // Direct insertion for tests and replay from persisted logs.
  void record_update(std::size_t round, NodeId sender, ParamVec update);
  void record_sa_output(std::size_t round, ParamVec sum);

  NodeId observer() const { return observer_; }
  std::span<const NodeId> neighbors() const { return neighbors_; }
  const ParamVec& initial() const { return initial_; }

  // Updates seen in `round`, keyed by sender (observer included).
  const std::map<NodeId, ParamVec>* round_updates(std::size_t round) const;
  const ParamVec* update(std::size_t round, NodeId sender) const;
  const ParamVec* sa_output(std::size_t round) const;
  std::size_t last_round() const;

  // Every coordinate multiplied by s (linearity checks).
  ObservedHistory scaled(double s) const;

 private:
  NodeId observer_;
  std::vector<NodeId> neighbors_;
  ParamVec initial_;
  std::map<std::size_t, std::map<NodeId, ParamVec>> rounds_;
  std::map<std::size_t, ParamVec> sa_outputs_;
};

// ---- membership inference -------------------------------------------------

// Modified (label-informed) entropy:
//   -(1 - p_y) ln(p_y) - sum_{i != y} p_i ln(1 - p_i)
// with probabilities clamped to [1e-12, 1 - 1e-12]. Low score = confident and
// correct, i.e. member-like.
double mentr(std::span<const double> probs, std::size_t label);

// Best balanced accuracy of "score < rho => member" over all thresholds,
// minus the 0.5 random-guessing baseline. Requires equal, non-empty sets.
double mia_accuracy_from_scores(std::span<const double> member_scores,
                                std::span<const double> nonmember_scores);

std::vector<double> mentr_scores(const ModelSpec& spec, const ParamVec& params,
                                 const Dataset& data, std::span<const std::size_t> rows);

double mia_accuracy(const ModelSpec& spec, const ParamVec& params, const Dataset& data,
                    std::span<const std::size_t> members,
                    std::span<const std::size_t> nonmembers);

double mean_loss(const ModelSpec& spec, const ParamVec& params, const Dataset& data,
                 std::span<const std::size_t> rows);

// Mean holdout loss minus mean training loss of one model.
double generalization_error(const ModelSpec& spec, const ParamVec& params,
                            const Dataset& data, std::span<const std::size_t> train,
                            std::span<const std::size_t> holdout);

// |members| rows sampled without replacement from the holdout, one fixed draw
// per victim.
std::vector<std::size_t> sample_nonmembers(std::uint64_t seed, NodeId victim,
                                           std::span<const std::size_t> holdout,
                                           std::size_t count);

// ---- system-knowledge attacks ----------------------------------------------

struct RecoveredGradient {
  ParamVec gradient;
  // True when local_steps > 1: the value is the accumulated pseudo-gradient
  // (theta^{t-1} - theta^{t-1/2}) / lr, not a single-batch gradient.
  bool pseudo = false;
};

// Replays the victim's aggregation of round t-1 from observed updates to get
// theta_v^{t-1}, then returns (theta_v^{t-1} - theta_v^{t-1/2}) / lr.
// Throws PreconditionError when nn(victim) is not covered by the history.
RecoveredGradient recover_gradient(const ObservedHistory& history, NodeId victim,
                                   std::span<const NodeId> victim_neighbors,
                                   std::size_t round, double lr,
                                   std::size_t local_steps = 1);

// (|nn(A)| - 1) * (theta_v - sum_{u in nn(A)\{v,A}} theta_u / (|nn(A)| - 1)).
// Throws PreconditionError when |nn(A)| < 3 or an update is missing.
ParamVec marginalize(const std::map<NodeId, ParamVec>& updates, NodeId observer,
                     std::span<const NodeId> observer_neighbors, NodeId victim);
ParamVec marginalize(const ObservedHistory& history, NodeId victim, std::size_t round);

// ---- gradient inversion -----------------------------------------------------

struct AnalyticInversion {
  std::vector<double> input;
  std::size_t label = 0;
};

// Exact single-sample reconstruction from a linear-softmax gradient: the
// label is the class with negative bias gradient, the input is a weight-row
// gradient divided by its bias gradient. Throws PreconditionError when every
// bias gradient is ~0 (nothing to invert).
AnalyticInversion invert_gradient_analytic(const ModelSpec& spec, const ParamVec& grad);

struct InversionOptions {
  std::size_t iters = 500;
  double lr = 0.05;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double fd_step = 1e-6;
};

struct DummyBatch {
  Matrix inputs;        // batch x input_dim
  Matrix label_logits;  // batch x num_classes; soft labels are softmax rows
};

struct OptimInversion {
  DummyBatch best;
  Matrix soft_labels;
  double cosine_distance = 1.0;
  std::size_t best_iter = 0;
  std::vector<double> trace;  // distance before each iteration
};

DummyBatch inversion_initial_guess(const ModelSpec& spec, const InversionOptions& opt);
Matrix soft_labels_of(const DummyBatch& dummy);
double cosine_distance(const ParamVec& a, const ParamVec& b);

// Adam (beta2 0.9, 10x step decay at 3/8, 5/8, 7/8) on the dummy inputs and
// label logits minimizing 1 - cos(grad(dummy; params), target). Derivatives
// w.r.t. the dummy come from central differences of the analytic gradient.
// Runs from the random initial guess and from label starts read off the
// target's output-bias block; the best run is returned with its trace.
OptimInversion invert_gradient_optim(const ModelSpec& spec, const ParamVec& params,
                                     const ParamVec& target, const InversionOptions& opt);

// ---- secure-aggregation evasion --------------------------------------------

// Two colluders A_a, A_b whose SA groups differ exactly by the victim:
// either nn(A_b) = nn(A_a) \ {v}, or equal neighborhoods with A_b simulating
// the victim's drop-out.
struct SaEvasionSetup {
  NodeId colluder_a = 0;
  NodeId colluder_b = 0;
  NodeId victim = 0;
  bool simulate_dropout = false;
};

// Throws PreconditionError naming the violated condition.
void check_sa_evasion(const Topology& topology, const SaEvasionSetup& setup,
                      std::size_t sa_threshold);

// SA(nn(A_a)) - SA(nn(A_b)): the victim's exact update.
ParamVec sa_evasion(const ParamVec& sa_a, const ParamVec& sa_b);
ParamVec sa_evasion(const ObservedHistory& a, const ObservedHistory& b,
                    std::size_t round);

// ---- passive MIA experiment ---------------------------------------------------

// Both generalization errors are measured over the pooled training data of
// all users, so a DL update and the FL global model sit on the same axis
// whichever user's shard the MIA targets.
struct AttackRow {
  std::size_t round = 0;
  NodeId victim = 0;
  double generalization_error = 0.0;
  double mia_received = 0.0;
  std::optional<double> mia_marginalized;
  double mia_fl_global = 0.0;
  double consensus_distance = 0.0;
  double fl_generalization_error = 0.0;
};

struct AttackReport {
  std::vector<AttackRow> rows;
  void write_csv(const std::filesystem::path& path) const;
  static const std::vector<std::string>& columns();
};

struct PassiveMiaInputs {
  const ModelSpec* spec = nullptr;
  const Dataset* data = nullptr;
  const Partition* partition = nullptr;
  std::uint64_t seed = 0;
  std::vector<NodeId> victims;
  // DL side: the attacker's observations and the consensus trace by round.
  const ObservedHistory* history = nullptr;
  std::map<std::size_t, double> consensus;
  // FL side: the paired run's global model by round.
  std::map<std::size_t, ParamVec> fl_global;
};

// For every victim and every round present in both runs: MIA on the received
// update, on its marginalized version when |nn(A)| >= 3, and on the FL global
// model, with the generalization error of the evaluated models.
AttackReport passive_mia_experiment(const PassiveMiaInputs& in);

}  // namespace dlsim
