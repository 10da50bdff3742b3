#pragma once

#include <span>

#include "dlsim/param_vec.hpp"
#include "dlsim/rng.hpp"

namespace dlsim {

struct ClipConfig {
  double tau = 0.0;
};

// Per-coordinate Gaussian noise added to every outgoing update.
struct NoiseConfig {
  double sigma = 0.0;
};

// min(1, tau/||x||) * x. clip(x, 0) is the zero vector.
ParamVec clip(const ParamVec& x, double tau);

// Self-centered clipping aggregation with uniform weights w = 1/|nn(v)|:
//   sum_{u in nn(v)} w * (own + CLIP(theta_u - own, tau))
// where nn(v) is {v} plus the senders of `received`. The self term adds
// w * own and CLIP(0) = 0.
ParamVec self_centered_aggregate(const ParamVec& own,
                                 std::span<const ParamVec* const> received, double tau);

// x + N(0, sigma^2) per coordinate.
ParamVec noisy_update(const ParamVec& x, Rng& rng, double sigma);

}  // namespace dlsim
