#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace dlsim {

// Flat vector of model parameters. Carries local states, model updates,
// gradients and attack payloads alike.
//
// The length is fixed at construction and every binary operation requires
// equal lengths (DimensionError otherwise). Every public operation checks its
// result for NaN/infinity and throws NumericError.
class ParamVec {
 public:
  ParamVec() = default;
  explicit ParamVec(std::size_t n, double fill = 0.0);
  explicit ParamVec(std::vector<double> values);
  ParamVec(std::initializer_list<double> values);

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const double* data() const { return values_.data(); }

  // Raw write access for builders. Call check_finite() when done.
  std::span<double> mutable_values() { return values_; }
  double* mutable_data() { return values_.data(); }
  void check_finite() const;

  ParamVec& operator+=(const ParamVec& other);
  ParamVec& operator-=(const ParamVec& other);
  ParamVec& operator*=(double a);
  // this += a * x
  ParamVec& add_scaled(double a, const ParamVec& x);

  friend ParamVec operator+(ParamVec lhs, const ParamVec& rhs) { return lhs += rhs; }
  friend ParamVec operator-(ParamVec lhs, const ParamVec& rhs) { return lhs -= rhs; }
  friend ParamVec operator*(double a, ParamVec x) { return x *= a; }
  friend ParamVec operator*(ParamVec x, double a) { return x *= a; }

  friend bool operator==(const ParamVec&, const ParamVec&) = default;

 private:
  std::vector<double> values_;
};

void require_same_length(const ParamVec& a, const ParamVec& b);

// a*x + y
ParamVec axpy(double a, const ParamVec& x, const ParamVec& y);
double dot(const ParamVec& x, const ParamVec& y);
double l2_norm(const ParamVec& x);
double squared_distance(const ParamVec& a, const ParamVec& b);
double max_abs_diff(const ParamVec& a, const ParamVec& b);

// Elementwise mean, summed in the given order. Throws on an empty list.
ParamVec mean(std::span<const ParamVec> vs);
ParamVec mean(std::span<const ParamVec* const> vs);
// Elementwise sum in the given order.
ParamVec sum(std::span<const ParamVec* const> vs);

// 64-bit FNV-1a over the little-endian byte image of the values.
std::uint64_t fnv1a64(std::span<const double> values);
std::uint64_t fnv1a64(const ParamVec& x);

}  // namespace dlsim
