#include "dlsim/param_vec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dlsim/errors.hpp"
#include "dlsim/kernels.hpp"

namespace dlsim {

ParamVec::ParamVec(std::size_t n, double fill) : values_(n, fill) { check_finite(); }

ParamVec::ParamVec(std::vector<double> values) : values_(std::move(values)) {
  check_finite();
}

ParamVec::ParamVec(std::initializer_list<double> values) : values_(values) {
  check_finite();
}

void ParamVec::check_finite() const {
  if (!kernels::active().all_finite(values_.data(), values_.size())) {
    throw NumericError("parameter vector contains NaN or infinity");
  }
}

void require_same_length(const ParamVec& a, const ParamVec& b) {
  if (a.size() != b.size()) {
    throw DimensionError("parameter vector length mismatch: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
}

ParamVec& ParamVec::operator+=(const ParamVec& other) {
  require_same_length(*this, other);
  kernels::active().add(values_.data(), other.data(), values_.data(), size());
  check_finite();
  return *this;
}

ParamVec& ParamVec::operator-=(const ParamVec& other) {
  require_same_length(*this, other);
  kernels::active().sub(values_.data(), other.data(), values_.data(), size());
  check_finite();
  return *this;
}

ParamVec& ParamVec::operator*=(double a) {
  kernels::active().scale(a, values_.data(), size());
  check_finite();
  return *this;
}

ParamVec& ParamVec::add_scaled(double a, const ParamVec& x) {
  require_same_length(*this, x);
  kernels::active().axpy(a, x.data(), values_.data(), size());
  check_finite();
  return *this;
}

ParamVec axpy(double a, const ParamVec& x, const ParamVec& y) {
  ParamVec out = y;
  out.add_scaled(a, x);
  return out;
}

double dot(const ParamVec& x, const ParamVec& y) {
  require_same_length(x, y);
  return kernels::active().dot(x.data(), y.data(), x.size());
}

double l2_norm(const ParamVec& x) {
  return std::sqrt(kernels::active().sum_squares(x.data(), x.size()));
}

double squared_distance(const ParamVec& a, const ParamVec& b) {
  require_same_length(a, b);
  std::vector<double> diff(a.size());
  const auto& k = kernels::active();
  k.sub(a.data(), b.data(), diff.data(), diff.size());
  return k.sum_squares(diff.data(), diff.size());
}

double max_abs_diff(const ParamVec& a, const ParamVec& b) {
  require_same_length(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

ParamVec sum(std::span<const ParamVec* const> vs) {
  if (vs.empty()) throw DimensionError("sum of an empty list of parameter vectors");
  ParamVec acc = *vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) acc += *vs[i];
  return acc;
}

ParamVec mean(std::span<const ParamVec* const> vs) {
  if (vs.empty()) throw DimensionError("mean of an empty list of parameter vectors");
  ParamVec acc = sum(vs);
  acc *= 1.0 / static_cast<double>(vs.size());
  return acc;
}

ParamVec mean(std::span<const ParamVec> vs) {
  std::vector<const ParamVec*> ptrs;
  ptrs.reserve(vs.size());
  for (const auto& v : vs) ptrs.push_back(&v);
  return mean(std::span<const ParamVec* const>(ptrs));
}

std::uint64_t fnv1a64(std::span<const double> values) {
  constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = kOffset;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xFFu;
      h *= kPrime;
    }
  }
  return h;
}

std::uint64_t fnv1a64(const ParamVec& x) { return fnv1a64(x.values()); }

}  // namespace dlsim
