#include "dlsim/behaviors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dlsim/adversary.hpp"
#include "dlsim/errors.hpp"

namespace dlsim {

EchoBehavior::EchoBehavior(const Topology& topology, NodeId attacker, NodeId victim)
    : attacker_(attacker), victim_(victim) {
  if (attacker >= topology.size() || victim >= topology.size()) {
    throw PreconditionError("echo: node id out of range");
  }
  if (attacker == victim || !topology.adjacent(attacker, victim)) {
    throw PreconditionError("echo: victim " + std::to_string(victim) + " not in nn(A)");
  }
  const auto nn = topology.neighbors(attacker);
  neighbors_.assign(nn.begin(), nn.end());
}

ParamVec EchoBehavior::echo_of(const std::map<NodeId, ParamVec>& updates) const {
  if (neighbors_.size() < 3) return updates.at(victim_);
  return marginalize(updates, attacker_, neighbors_, victim_);
}

std::map<NodeId, ParamVec> EchoBehavior::forge(const ForgeContext& ctx) {
  const auto& source = ctx.inbox.count(victim_) != 0 ? ctx.inbox : last_seen_;
  std::map<NodeId, ParamVec> out;
  if (source.count(victim_) == 0) {
    last_payload_.reset();
    return out;  // nothing observed yet: the engine sends our own state
  }
  // marginalize() wants A's own entry only to skip it; the inbox never has one.
  last_payload_ = echo_of(source);
  for (NodeId u : ctx.neighbors) {
    if (u != attacker_) out.emplace(u, *last_payload_);
  }
  return out;
}

void EchoBehavior::observe(std::size_t, const std::map<NodeId, ParamVec>& inbox) {
  last_seen_ = inbox;
}

StateOverrideBehavior::StateOverrideBehavior(const Topology& topology, NodeId attacker,
                                             std::vector<OverridePayload> payloads, bool stale)
    : attacker_(attacker), payloads_(std::move(payloads)), stale_(stale) {
  if (attacker >= topology.size()) throw PreconditionError("state-override: attacker out of range");
  for (const auto& p : payloads_) {
    const NodeId v = p.target;
    if (v >= topology.size() || v == attacker) {
      throw PreconditionError("state-override: invalid target " + std::to_string(v));
    }
    if (!topology.covers(attacker, v)) {
      throw PreconditionError("state-override: nn(v) ⊄ nn(A) for target v=" +
                              std::to_string(v) + ", A=" + std::to_string(attacker));
    }
    Target t;
    t.payload = p;
    t.degree = topology.degree(v);
    for (NodeId u : topology.neighbors(v)) {
      if (u != attacker) t.honest.push_back(u);
    }
    targets_.push_back(std::move(t));
  }
}

std::map<NodeId, ParamVec> StateOverrideBehavior::forge(const ForgeContext& ctx) {
  const auto& source = stale_ ? last_seen_ : ctx.inbox;
  std::map<NodeId, ParamVec> out;
  for (const auto& t : targets_) {
    ParamVec honest_sum(t.payload.params.size());
    bool complete = true;
    for (NodeId u : t.honest) {
      const auto it = source.find(u);
      if (it == source.end()) {
        complete = false;
        break;
      }
      honest_sum += it->second;
    }
    if (!complete) {
      if (!stale_) {
        throw PreconditionError(
            "state-override: honest updates of this round are missing; the exact "
            "variant needs a rushing schedule");
      }
      continue;  // first round of the stale variant: nothing observed yet
    }
    ParamVec forged = t.payload.params * static_cast<double>(t.degree);
    forged -= honest_sum;
    out.insert_or_assign(t.payload.target, std::move(forged));
  }
  return out;
}

void StateOverrideBehavior::observe(std::size_t, const std::map<NodeId, ParamVec>& inbox) {
  last_seen_ = inbox;
}

double override_control(const ParamVec& attacked, const ParamVec& baseline,
                        const ParamVec& payload) {
  const double ref = std::sqrt(squared_distance(baseline, payload));
  if (ref == 0.0) throw PreconditionError("override control: payload equals the baseline state");
  return 1.0 - std::sqrt(squared_distance(attacked, payload)) / ref;
}

}  // namespace dlsim
