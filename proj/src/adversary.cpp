#include "dlsim/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dlsim/errors.hpp"

namespace dlsim {

// ---- ObservedHistory --------------------------------------------------------

ObservedHistory::ObservedHistory(NodeId observer, std::span<const NodeId> neighbors,
                                 ParamVec initial)
    : observer_(observer),
      neighbors_(neighbors.begin(), neighbors.end()),
      initial_(std::move(initial)) {
  std::sort(neighbors_.begin(), neighbors_.end());
}

void ObservedHistory::record(const RoundLog& log) {
  if (const auto own = log.updates.find(observer_); own != log.updates.end()) {
    rounds_[log.round][observer_] = own->second;
  }
  if (log.secure_aggregation) {
    if (const auto sa = log.sa_outputs.find(observer_); sa != log.sa_outputs.end()) {
      sa_outputs_[log.round] = sa->second;
    }
    return;
  }
  for (const auto& msg : log.messages) {
    if (msg.receiver == observer_) rounds_[log.round][msg.sender] = msg.update;
  }
}

void ObservedHistory::record_update(std::size_t round, NodeId sender, ParamVec update) {
  rounds_[round][sender] = std::move(update);
}

void ObservedHistory::record_sa_output(std::size_t round, ParamVec sum) {
  sa_outputs_[round] = std::move(sum);
}

const std::map<NodeId, ParamVec>* ObservedHistory::round_updates(std::size_t round) const {
  const auto it = rounds_.find(round);
  return it == rounds_.end() ? nullptr : &it->second;
}

const ParamVec* ObservedHistory::update(std::size_t round, NodeId sender) const {
  const auto* r = round_updates(round);
  if (r == nullptr) return nullptr;
  const auto it = r->find(sender);
  return it == r->end() ? nullptr : &it->second;
}

const ParamVec* ObservedHistory::sa_output(std::size_t round) const {
  const auto it = sa_outputs_.find(round);
  return it == sa_outputs_.end() ? nullptr : &it->second;
}

std::size_t ObservedHistory::last_round() const {
  std::size_t last = 0;
  if (!rounds_.empty()) last = rounds_.rbegin()->first;
  if (!sa_outputs_.empty()) last = std::max(last, sa_outputs_.rbegin()->first);
  return last;
}

ObservedHistory ObservedHistory::scaled(double s) const {
  ObservedHistory out(observer_, neighbors_, initial_ * s);
  for (const auto& [round, updates] : rounds_) {
    for (const auto& [sender, u] : updates) out.rounds_[round][sender] = u * s;
  }
  for (const auto& [round, sum] : sa_outputs_) out.sa_outputs_[round] = sum * s;
  return out;
}

// ---- membership inference ---------------------------------------------------

double mentr(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw DimensionError("mentr: label out of range");
  constexpr double kLo = 1e-12;
  constexpr double kHi = 1.0 - 1e-12;
  double score = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kLo, kHi);
    if (i == label) {
      score -= (1.0 - p) * std::log(p);
    } else {
      score -= p * std::log(1.0 - p);
    }
  }
  // Clamping can leave a -0.0 or a denormal negative at perfect confidence.
  return std::max(score, 0.0);
}

double mia_accuracy_from_scores(std::span<const double> member_scores,
                                std::span<const double> nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw std::invalid_argument("MIA needs non-empty member and non-member sets");
  }
  if (member_scores.size() != nonmember_scores.size()) {
    throw std::invalid_argument("MIA needs |members| == |non-members|");
  }
  std::vector<std::pair<double, bool>> all;
  all.reserve(member_scores.size() * 2);
  for (double s : member_scores) all.emplace_back(s, true);
  for (double s : nonmember_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  const double total = static_cast<double>(all.size());
  const auto n_nonmembers = static_cast<double>(nonmember_scores.size());
  // rho at each distinct score value c: member iff score < c.
  double members_below = 0.0;
  double nonmembers_below = 0.0;
  double best = (members_below + (n_nonmembers - nonmembers_below)) / total;
  std::size_t i = 0;
  while (i < all.size()) {
    const double c = all[i].first;
    best = std::max(best, (members_below + (n_nonmembers - nonmembers_below)) / total);
    while (i < all.size() && all[i].first == c) {
      (all[i].second ? members_below : nonmembers_below) += 1.0;
      ++i;
    }
  }
  best = std::max(best, (members_below + (n_nonmembers - nonmembers_below)) / total);
  return best - 0.5;
}

std::vector<double> mentr_scores(const ModelSpec& spec, const ParamVec& params,
                                 const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<double> scores;
  scores.reserve(rows.size());
  for (auto r : rows) {
    scores.push_back(mentr(predict_proba(spec, params, data.inputs.row(r)), data.labels[r]));
  }
  return scores;
}

double mia_accuracy(const ModelSpec& spec, const ParamVec& params, const Dataset& data,
                    std::span<const std::size_t> members,
                    std::span<const std::size_t> nonmembers) {
  const auto in = mentr_scores(spec, params, data, members);
  const auto out = mentr_scores(spec, params, data, nonmembers);
  return mia_accuracy_from_scores(in, out);
}

double mean_loss(const ModelSpec& spec, const ParamVec& params, const Dataset& data,
                 std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("mean_loss over no rows");
  return loss(spec, params, make_batch(data, rows));
}

double generalization_error(const ModelSpec& spec, const ParamVec& params,
                            const Dataset& data, std::span<const std::size_t> train,
                            std::span<const std::size_t> holdout) {
  return mean_loss(spec, params, data, holdout) - mean_loss(spec, params, data, train);
}

std::vector<std::size_t> sample_nonmembers(std::uint64_t seed, NodeId victim,
                                           std::span<const std::size_t> holdout,
                                           std::size_t count) {
  if (holdout.size() < count) {
    throw PreconditionError("holdout has " + std::to_string(holdout.size()) +
                            " rows, fewer than the " + std::to_string(count) +
                            " non-members needed (|O| must equal |X_v|)");
  }
  Rng rng(seed, stream_id(Stream::kNonMembers, victim));
  std::vector<std::size_t> out;
  out.reserve(count);
  for (auto i : rng.sample_without_replacement(holdout.size(), count)) {
    out.push_back(holdout[i]);
  }
  return out;
}

// ---- system-knowledge attacks -----------------------------------------------

RecoveredGradient recover_gradient(const ObservedHistory& history, NodeId victim,
                                   std::span<const NodeId> victim_neighbors,
                                   std::size_t round, double lr,
                                   std::size_t local_steps) {
  if (round < 1) throw std::invalid_argument("gradient recovery starts at round 1");
  if (!(lr > 0.0)) throw std::invalid_argument("gradient recovery needs lr > 0");
  const ParamVec* current = history.update(round, victim);
  if (current == nullptr) {
    throw PreconditionError("victim not fully observable: no round-" +
                            std::to_string(round) + " update from node " +
                            std::to_string(victim));
  }
  ParamVec previous;
  if (round == 1) {
    previous = history.initial();
  } else {
    std::vector<NodeId> nn(victim_neighbors.begin(), victim_neighbors.end());
    std::sort(nn.begin(), nn.end());
    std::vector<const ParamVec*> inputs;
    for (NodeId u : nn) {
      const ParamVec* p = history.update(round - 1, u);
      if (p == nullptr) {
        throw PreconditionError("victim not fully observable: nn(v) not a subset of nn(A) "
                                "(missing round-" + std::to_string(round - 1) +
                                " update of node " + std::to_string(u) + ")");
      }
      inputs.push_back(p);
    }
    previous = mean(std::span<const ParamVec* const>(inputs));
  }
  ParamVec g = previous - *current;
  for (double& v : g.mutable_values()) v /= lr;
  g.check_finite();
  return {std::move(g), local_steps > 1};
}

ParamVec marginalize(const std::map<NodeId, ParamVec>& updates, NodeId observer,
                     std::span<const NodeId> observer_neighbors, NodeId victim) {
  const std::size_t k = observer_neighbors.size();
  if (k < 3) {
    throw PreconditionError("marginalization needs |nn(A)| >= 3, got " + std::to_string(k) +
                            "; use the raw victim update instead");
  }
  if (victim == observer ||
      std::find(observer_neighbors.begin(), observer_neighbors.end(), victim) ==
          observer_neighbors.end()) {
    throw PreconditionError("victim " + std::to_string(victim) + " is not a neighbor of A");
  }
  const auto victim_it = updates.find(victim);
  if (victim_it == updates.end()) {
    throw PreconditionError("no update from victim " + std::to_string(victim));
  }
  ParamVec others(victim_it->second.size());
  for (NodeId u : observer_neighbors) {
    if (u == victim || u == observer) continue;
    const auto it = updates.find(u);
    if (it == updates.end()) {
      throw PreconditionError("no update from neighbor " + std::to_string(u));
    }
    others += it->second;
  }
  const double km1 = static_cast<double>(k - 1);
  ParamVec out = victim_it->second;
  out.add_scaled(-1.0 / km1, others);
  out *= km1;
  return out;
}

ParamVec marginalize(const ObservedHistory& history, NodeId victim, std::size_t round) {
  const auto* updates = history.round_updates(round);
  if (updates == nullptr) {
    throw PreconditionError("no observations for round " + std::to_string(round));
  }
  return marginalize(*updates, history.observer(), history.neighbors(), victim);
}

// ---- gradient inversion -------------------------------------------------------

AnalyticInversion invert_gradient_analytic(const ModelSpec& spec, const ParamVec& grad) {
  if (spec.kind != ModelKind::kLinearSoftmax) {
    throw std::invalid_argument("analytic inversion supports linear-softmax only");
  }
  if (grad.size() != spec.param_count()) throw DimensionError("gradient size mismatch");
  const ParamLayout L = ParamLayout::of(spec);
  const std::size_t C = spec.num_classes;
  const std::size_t D = spec.input_dim;

  std::size_t pivot = C;
  double pivot_mag = 1e-9;
  std::size_t label = 0;
  for (std::size_t k = 0; k < C; ++k) {
    const double gb = grad[L.b1 + k];
    if (std::abs(gb) > pivot_mag) {
      pivot_mag = std::abs(gb);
      pivot = k;
    }
    if (gb < grad[L.b1 + label]) label = k;
  }
  if (pivot == C) {
    throw PreconditionError("uninvertible gradient: every bias gradient is ~0");
  }
  AnalyticInversion out;
  out.label = label;
  out.input.resize(D);
  const double gb = grad[L.b1 + pivot];
  for (std::size_t j = 0; j < D; ++j) out.input[j] = grad[L.w1 + pivot * D + j] / gb;
  return out;
}

double cosine_distance(const ParamVec& a, const ParamVec& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot(a, b) / (na * nb);
}

DummyBatch inversion_initial_guess(const ModelSpec& spec, const InversionOptions& opt) {
  Rng rng(opt.seed, stream_id(Stream::kInversion));
  DummyBatch d{Matrix(opt.batch_size, spec.input_dim),
               Matrix(opt.batch_size, spec.num_classes)};
  for (double& v : d.inputs.flat()) v = rng.normal();
  for (double& v : d.label_logits.flat()) v = rng.normal();
  return d;
}

Matrix soft_labels_of(const DummyBatch& dummy) {
  Matrix t(dummy.label_logits.rows(), dummy.label_logits.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const auto p = softmax(dummy.label_logits.row(i));
    std::copy(p.begin(), p.end(), t.row(i).begin());
  }
  return t;
}

namespace {

double dummy_distance(const ModelSpec& spec, const ParamVec& params,
                      const ParamVec& target, const DummyBatch& d) {
  return cosine_distance(gradient_soft(spec, params, d.inputs, soft_labels_of(d)), target);
}

}  // namespace

namespace {

constexpr double kLabelStartScale = 3.0;

OptimInversion descend(const ModelSpec& spec, const ParamVec& params, const ParamVec& target,
                       const InversionOptions& opt, DummyBatch d) {
  std::vector<double*> vars;
  for (double& v : d.inputs.flat()) vars.push_back(&v);
  for (double& v : d.label_logits.flat()) vars.push_back(&v);

  // A short second-moment memory keeps steps from collapsing once the
  // early large gradients are gone.
  constexpr double kBeta1 = 0.9, kBeta2 = 0.9, kEps = 1e-8;
  std::vector<double> m(vars.size(), 0.0), s(vars.size(), 0.0), grad(vars.size(), 0.0);

  OptimInversion result;
  result.best = d;
  result.cosine_distance = dummy_distance(spec, params, target, d);
  for (std::size_t it = 0; it < opt.iters; ++it) {
    const double f = dummy_distance(spec, params, target, d);
    result.trace.push_back(f);
    if (f < result.cosine_distance) {
      result.cosine_distance = f;
      result.best = d;
      result.best_iter = it;
    }
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const double saved = *vars[i];
      *vars[i] = saved + opt.fd_step;
      const double up = dummy_distance(spec, params, target, d);
      *vars[i] = saved - opt.fd_step;
      const double down = dummy_distance(spec, params, target, d);
      *vars[i] = saved;
      grad[i] = (up - down) / (2.0 * opt.fd_step);
    }
    // Step decay by 10x at 3/8, 5/8 and 7/8 of the budget.
    double lr = opt.lr;
    for (std::size_t k : {3u, 5u, 7u}) {
      if (8 * it >= k * opt.iters) lr *= 0.1;
    }
    const double t = static_cast<double>(it + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      s[i] = kBeta2 * s[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      *vars[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + kEps);
    }
  }
  const double final_f = dummy_distance(spec, params, target, d);
  if (final_f < result.cosine_distance) {
    result.cosine_distance = final_f;
    result.best = d;
    result.best_iter = opt.iters;
  }
  result.soft_labels = soft_labels_of(result.best);
  return result;
}

}  // namespace

OptimInversion invert_gradient_optim(const ModelSpec& spec, const ParamVec& params,
                                     const ParamVec& target, const InversionOptions& opt) {
  if (opt.iters == 0) throw std::invalid_argument("inversion needs iters >= 1");
  if (target.size() != spec.param_count()) throw DimensionError("gradient size mismatch");

  const DummyBatch plain = inversion_initial_guess(spec, opt);
  OptimInversion best = descend(spec, params, target, opt, plain);

  // The output-bias gradient is the batch sum of p - y, so its most negative
  // entries point at the true labels. A second start puts the dummy label
  // mass there; random label starts often settle in a wrong-label basin.
  const std::size_t c = spec.num_classes;
  const double* gb = target.data() + target.size() - c;
  double scale = 0.0;
  for (std::size_t k = 0; k < c; ++k) scale = std::max(scale, std::abs(gb[k]));
  // Both signs of the input draw are tried, since a flipped input is the
  // other common trap.
  for (const double sign : {1.0, -1.0}) {
    if (scale == 0.0) break;
    DummyBatch informed = plain;
    for (double& x : informed.inputs.flat()) x *= sign;
    for (std::size_t i = 0; i < informed.label_logits.rows(); ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        informed.label_logits(i, k) = -kLabelStartScale * gb[k] / scale;
      }
    }
    OptimInversion other = descend(spec, params, target, opt, std::move(informed));
    if (other.cosine_distance < best.cosine_distance) best = std::move(other);
  }
  return best;
}


// ---- SA evasion ----------------------------------------------------------------

void check_sa_evasion(const Topology& topology, const SaEvasionSetup& s,
                      std::size_t sa_threshold) {
  const std::size_t n = topology.size();
  if (s.colluder_a >= n || s.colluder_b >= n || s.victim >= n) {
    throw PreconditionError("SA evasion: node id out of range");
  }
  if (s.colluder_a == s.colluder_b || s.victim == s.colluder_a || s.victim == s.colluder_b) {
    throw PreconditionError("SA evasion needs two distinct colluders and a third victim");
  }
  const auto na = topology.neighbors(s.colluder_a);
  const auto nb = topology.neighbors(s.colluder_b);
  std::vector<NodeId> a_minus_v;
  for (NodeId u : na) {
    if (u != s.victim) a_minus_v.push_back(u);
  }
  if (!topology.adjacent(s.colluder_a, s.victim)) {
    throw PreconditionError("SA evasion: victim not in nn(A_a)");
  }
  std::size_t b_survivors = nb.size();
  if (s.simulate_dropout) {
    if (!std::equal(na.begin(), na.end(), nb.begin(), nb.end())) {
      throw PreconditionError("SA evasion (drop-out variant): nn(A_b) != nn(A_a)");
    }
    b_survivors -= 1;
  } else if (!std::equal(a_minus_v.begin(), a_minus_v.end(), nb.begin(), nb.end())) {
    throw PreconditionError("SA evasion: nn(A_b) != nn(A_a) \\ {v}");
  }
  if (b_survivors < sa_threshold) {
    throw PreconditionError("SA evasion infeasible: threshold " +
                            std::to_string(sa_threshold) + " exceeds the " +
                            std::to_string(b_survivors) +
                            " participants of the smaller aggregate");
  }
}

ParamVec sa_evasion(const ParamVec& sa_a, const ParamVec& sa_b) { return sa_a - sa_b; }

ParamVec sa_evasion(const ObservedHistory& a, const ObservedHistory& b, std::size_t round) {
  const ParamVec* sa = a.sa_output(round);
  const ParamVec* sb = b.sa_output(round);
  if (sa == nullptr || sb == nullptr) {
    throw PreconditionError("SA evasion: missing aggregate for round " + std::to_string(round));
  }
  return sa_evasion(*sa, *sb);
}

// ---- passive MIA experiment -----------------------------------------------------

const std::vector<std::string>& AttackReport::columns() {
  static const std::vector<std::string> cols{
      "round",         "victim",          "generalization_error",
      "mia_received",  "mia_marginalized", "mia_fl_global",
      "consensus_distance", "fl_generalization_error"};
  return cols;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void AttackReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    out << r.round << ',' << r.victim << ',' << num(r.generalization_error) << ','
        << num(r.mia_received) << ','
        << (r.mia_marginalized ? num(*r.mia_marginalized) : std::string()) << ','
        << num(r.mia_fl_global) << ',' << num(r.consensus_distance) << ','
        << num(r.fl_generalization_error) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

AttackReport passive_mia_experiment(const PassiveMiaInputs& in) {
  if (in.spec == nullptr || in.data == nullptr || in.partition == nullptr ||
      in.history == nullptr) {
    throw std::invalid_argument("passive MIA experiment: missing inputs");
  }
  const auto& spec = *in.spec;
  const auto& data = *in.data;
  const auto& holdout = in.partition->holdout;
  const bool can_marginalize = in.history->neighbors().size() >= 3;
  std::vector<std::size_t> pooled;
  for (const auto& shard : in.partition->shards) pooled.insert(pooled.end(), shard.begin(), shard.end());
  std::sort(pooled.begin(), pooled.end());

  std::map<NodeId, std::vector<std::size_t>> nonmembers;
  for (NodeId v : in.victims) {
    nonmembers[v] = sample_nonmembers(in.seed, v, holdout, in.partition->shards.at(v).size());
  }

  if (in.history->last_round() == 0) {
    throw PreconditionError("no captured updates; enable update recording for this run");
  }
  AttackReport report;
  for (const auto& [round, global] : in.fl_global) {
    if (round == 0) continue;
    if (in.history->round_updates(round) == nullptr) continue;  // DL run stopped earlier
    const double fl_gen = generalization_error(spec, global, data, pooled, holdout);
    for (NodeId v : in.victims) {
      const ParamVec* received = in.history->update(round, v);
      if (received == nullptr) {
        throw PreconditionError("missing captured update of victim " + std::to_string(v) +
                                " in round " + std::to_string(round));
      }
      const auto& members = in.partition->shards.at(v);
      const auto& outs = nonmembers.at(v);
      AttackRow row;
      row.round = round;
      row.victim = v;
      row.generalization_error = generalization_error(spec, *received, data, pooled, holdout);
      row.mia_received = mia_accuracy(spec, *received, data, members, outs);
      if (can_marginalize) {
        row.mia_marginalized =
            mia_accuracy(spec, marginalize(*in.history, v, round), data, members, outs);
      }
      row.mia_fl_global = mia_accuracy(spec, global, data, members, outs);
      row.fl_generalization_error = fl_gen;
      const auto c = in.consensus.find(round);
      row.consensus_distance = c == in.consensus.end() ? 0.0 : c->second;
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace dlsim
