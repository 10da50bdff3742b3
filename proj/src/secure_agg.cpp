#include "dlsim/secure_agg.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "dlsim/errors.hpp"
#include "dlsim/rng.hpp"

namespace dlsim {

std::vector<NodeId> SAGroup::survivors() const {
  std::vector<NodeId> out;
  for (NodeId v : participants) {
    if (!is_dropped(v)) out.push_back(v);
  }
  return out;
}

bool SAGroup::is_dropped(NodeId v) const {
  return std::find(dropped.begin(), dropped.end(), v) != dropped.end();
}

ParamVec SAGroup::pair_mask(NodeId a, NodeId b, std::size_t length) const {
  if (a > b) std::swap(a, b);
  Rng rng(seed, stream_id(Stream::kMasks, instance, (static_cast<std::uint64_t>(a) << 32) ^ b));
  ParamVec mask(length);
  for (double& v : mask.mutable_values()) v = rng.uniform(-mask_scale, mask_scale);
  return mask;
}

ParamVec masked_share(const SAGroup& group, NodeId who, const ParamVec& input) {
  ParamVec share = input;
  for (NodeId other : group.participants) {
    if (other == who) continue;
    const ParamVec m = group.pair_mask(who, other, input.size());
    if (who < other) {
      share += m;
    } else {
      share -= m;
    }
  }
  return share;
}

namespace {

// Masks that survivors added for dropped peers and that therefore do not
// cancel; the server reconstructs and removes them.
ParamVec recovery_correction(const SAGroup& group, const std::vector<NodeId>& alive,
                             std::size_t length) {
  ParamVec correction(length);
  for (NodeId s : alive) {
    for (NodeId d : group.dropped) {
      if (std::find(group.participants.begin(), group.participants.end(), d) ==
          group.participants.end()) {
        continue;
      }
      const ParamVec m = group.pair_mask(s, d, length);
      if (s < d) {
        correction += m;
      } else {
        correction -= m;
      }
    }
  }
  return correction;
}

}  // namespace

ParamVec secure_aggregate(const SAGroup& group, const std::map<NodeId, ParamVec>& inputs) {
  const auto alive = group.survivors();
  if (alive.size() < group.threshold || alive.empty()) {
    throw PreconditionError("secure aggregation: " + std::to_string(alive.size()) +
                            " surviving participants below threshold " +
                            std::to_string(group.threshold));
  }
  std::size_t length = 0;
  ParamVec total;
  bool first = true;
  for (NodeId v : alive) {
    const auto it = inputs.find(v);
    if (it == inputs.end()) {
      throw std::invalid_argument("secure aggregation: no input from participant " +
                                  std::to_string(v));
    }
    const ParamVec share = masked_share(group, v, it->second);
    if (first) {
      total = share;
      length = share.size();
      first = false;
    } else {
      total += share;
    }
  }
  total -= recovery_correction(group, alive, length);
  return total;
}

ParamVec mask_residual(const SAGroup& group, std::size_t length) {
  const auto alive = group.survivors();
  ParamVec zero(length);
  ParamVec total(length);
  for (NodeId v : alive) total += masked_share(group, v, zero);
  total -= recovery_correction(group, alive, length);
  return total;
}

}  // namespace dlsim
