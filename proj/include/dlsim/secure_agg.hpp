#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "dlsim/param_vec.hpp"
#include "dlsim/topology.hpp"

namespace dlsim {

// One secure-aggregation instance: a participant set whose members mask their
// inputs with pairwise cancelling pseudorandom vectors. Dropped participants
// submit nothing; their pair masks are removed by the recovery step, so the
// output is the plain sum over survivors.
struct SAGroup {
  std::vector<NodeId> participants;  // sorted, unique
  std::vector<NodeId> dropped;
  std::size_t threshold = 1;  // minimum surviving participants
  std::uint64_t seed = 0;
  std::uint64_t instance = 0;  // distinguishes rounds/owners
  double mask_scale = 16.0;

  std::vector<NodeId> survivors() const;
  bool is_dropped(NodeId v) const;
  // Mask shared by a < b; participant a adds it and b subtracts it.
  ParamVec pair_mask(NodeId a, NodeId b, std::size_t length) const;
};

// What participant `who` uploads: its input plus its signed pair masks with
// every other participant.
ParamVec masked_share(const SAGroup& group, NodeId who, const ParamVec& input);

// Sum over surviving participants. Only masked shares enter the sum; the
// plain inputs are read solely to produce those shares.
ParamVec secure_aggregate(const SAGroup& group, const std::map<NodeId, ParamVec>& inputs);

// Residual of all pair masks among survivors plus the recovery correction;
// zero up to rounding.
ParamVec mask_residual(const SAGroup& group, std::size_t length);

}  // namespace dlsim
