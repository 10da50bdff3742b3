#include "dlsim/defenses.hpp"

#include <cmath>
#include <stdexcept>

namespace dlsim {

ParamVec clip(const ParamVec& x, double tau) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("clip threshold must be finite and >= 0");
  }
  const double norm = l2_norm(x);
  if (norm <= tau) return x;
  if (tau == 0.0) return ParamVec(x.size());
  return x * (tau / norm);
}

ParamVec self_centered_aggregate(const ParamVec& own,
                                 std::span<const ParamVec* const> received, double tau) {
  const double w = 1.0 / static_cast<double>(received.size() + 1);
  ParamVec correction(own.size());
  for (const ParamVec* u : received) {
    correction += clip(*u - own, tau);
  }
  return axpy(w, correction, own);
}

ParamVec noisy_update(const ParamVec& x, Rng& rng, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("noise sigma must be finite and >= 0");
  }
  if (sigma == 0.0) return x;
  ParamVec out = x;
  for (double& v : out.mutable_values()) v += sigma * rng.normal();
  out.check_finite();
  return out;
}

}  // namespace dlsim
