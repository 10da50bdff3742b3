#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dlsim/param_vec.hpp"
#include "dlsim/protocol.hpp"
#include "dlsim/topology.hpp"

namespace dlsim {

// Echo attack: the node never trains. Every round it sends the marginalized
// update of its victim (or the raw one when |nn(A)| < 3) to all neighbors.
// Under a synchronous schedule it echoes the latest round it has observed.
class EchoBehavior : public Behavior {
 public:
  EchoBehavior(const Topology& topology, NodeId attacker, NodeId victim);

  std::string name() const override { return "echo"; }
  std::map<NodeId, ParamVec> forge(const ForgeContext& ctx) override;
  void observe(std::size_t round, const std::map<NodeId, ParamVec>& inbox) override;

  // The payload broadcast in the most recent forge, if any.
  const std::optional<ParamVec>& last_payload() const { return last_payload_; }

 private:
  ParamVec echo_of(const std::map<NodeId, ParamVec>& updates) const;

  NodeId attacker_;
  NodeId victim_;
  std::vector<NodeId> neighbors_;
  std::map<NodeId, ParamVec> last_seen_;
  std::optional<ParamVec> last_payload_;
};

struct OverridePayload {
  NodeId target = 0;
  ParamVec params;
};

// State override: for each target v the node sends
//   -sum_{u in nn(v) \ A} theta_u + |nn(v)| * payload
// so that v's plain average lands on the payload. Requires nn(v) to be a
// subset of nn(A) for every target. With `stale` the honest sum comes from
// the previous round's observed updates (synchronous schedule); otherwise the
// current round's inbox is used, which needs a rushing schedule.
class StateOverrideBehavior : public Behavior {
 public:
  StateOverrideBehavior(const Topology& topology, NodeId attacker,
                        std::vector<OverridePayload> payloads, bool stale = false);

  std::string name() const override { return stale_ ? "state-override-stale" : "state-override"; }
  std::map<NodeId, ParamVec> forge(const ForgeContext& ctx) override;
  void observe(std::size_t round, const std::map<NodeId, ParamVec>& inbox) override;

  const std::vector<OverridePayload>& payloads() const { return payloads_; }

 private:
  struct Target {
    OverridePayload payload;
    std::vector<NodeId> honest;  // nn(v) \ A, sorted
    std::size_t degree = 0;      // |nn(v)|
  };

  NodeId attacker_;
  std::vector<OverridePayload> payloads_;
  std::vector<Target> targets_;
  bool stale_;
  std::map<NodeId, ParamVec> last_seen_;
};

// 1 - |attacked - payload| / |baseline - payload|, where baseline is the
// target's state in a paired run without the attack. 1 means the attacker
// fully dictates the state, 0 means no pull toward the payload.
double override_control(const ParamVec& attacked, const ParamVec& baseline,
                        const ParamVec& payload);

}  // namespace dlsim
