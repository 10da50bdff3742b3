#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <vector>

#include "dlsim/kernels.hpp"

using namespace dlsim::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> d(0.0, 3.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

class KernelEquivalence : public ::testing::TestWithParam<std::size_t> {
 protected:
  void SetUp() override {
    if (avx2_table() == nullptr) GTEST_SKIP() << "AVX2 not available on this CPU";
  }
};

}  // namespace

TEST(Kernels, ScalarReferenceValues) {
  const auto& k = scalar_table();
  std::vector<double> x{1, 2, 3}, y{4, 5, 6}, out(3);
  k.axpy(2.0, x.data(), y.data(), 3);
  EXPECT_EQ(y, (std::vector<double>{6, 9, 12}));
  k.axpby(1.0, x.data(), 0.5, y.data(), 3);
  EXPECT_EQ(y, (std::vector<double>{4, 6.5, 9}));
  k.sub(y.data(), x.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{3, 4.5, 6}));
  k.add(x.data(), x.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{2, 4, 6}));
  k.scale(-1.0, out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{-2, -4, -6}));
  EXPECT_DOUBLE_EQ(k.dot(x.data(), x.data(), 3), 14.0);
  EXPECT_DOUBLE_EQ(k.sum_squares(x.data(), 3), 14.0);
  EXPECT_TRUE(k.all_finite(x.data(), 3));
  x[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(k.all_finite(x.data(), 3));
  EXPECT_DOUBLE_EQ(k.dot(x.data(), y.data(), 0), 0.0);
}

TEST_P(KernelEquivalence, ElementwiseKernelsAreBitIdentical) {
  const std::size_t n = GetParam();
  const auto& s = scalar_table();
  const auto& v = *avx2_table();
  std::mt19937_64 gen(n + 1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_vec(gen, n);
    const auto y0 = random_vec(gen, n);
    const double a = std::normal_distribution<double>(0, 2)(gen);
    const double b = std::normal_distribution<double>(0, 2)(gen);

    auto ys = y0, yv = y0;
    s.axpy(a, x.data(), ys.data(), n);
    v.axpy(a, x.data(), yv.data(), n);
    EXPECT_TRUE(bitwise_equal(ys, yv)) << "axpy n=" << n;

    ys = y0, yv = y0;
    s.axpby(a, x.data(), b, ys.data(), n);
    v.axpby(a, x.data(), b, yv.data(), n);
    EXPECT_TRUE(bitwise_equal(ys, yv)) << "axpby n=" << n;

    ys = x, yv = x;
    s.scale(a, ys.data(), n);
    v.scale(a, yv.data(), n);
    EXPECT_TRUE(bitwise_equal(ys, yv)) << "scale n=" << n;

    std::vector<double> os(n), ov(n);
    s.add(x.data(), y0.data(), os.data(), n);
    v.add(x.data(), y0.data(), ov.data(), n);
    EXPECT_TRUE(bitwise_equal(os, ov)) << "add n=" << n;
    s.sub(x.data(), y0.data(), os.data(), n);
    v.sub(x.data(), y0.data(), ov.data(), n);
    EXPECT_TRUE(bitwise_equal(os, ov)) << "sub n=" << n;
  }
}

TEST_P(KernelEquivalence, ReductionsAgreeToRounding) {
  const std::size_t n = GetParam();
  const auto& s = scalar_table();
  const auto& v = *avx2_table();
  std::mt19937_64 gen(n + 77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_vec(gen, n);
    const auto y = random_vec(gen, n);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(x[i] * y[i]);
    const double tol = 4.0 * static_cast<double>(n + 1) *
                       std::numeric_limits<double>::epsilon() * (abs_sum + 1e-300);
    EXPECT_NEAR(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), tol);
    const double ss = s.sum_squares(x.data(), n);
    EXPECT_NEAR(ss, v.sum_squares(x.data(), n),
                4.0 * static_cast<double>(n + 1) * std::numeric_limits<double>::epsilon() * ss);
  }
}

TEST_P(KernelEquivalence, FiniteCheckAgrees) {
  const std::size_t n = GetParam();
  if (n == 0) return;
  std::mt19937_64 gen(n);
  for (std::size_t pos : {std::size_t{0}, n / 2, n - 1}) {
    auto x = random_vec(gen, n);
    EXPECT_TRUE(avx2_table()->all_finite(x.data(), n));
    x[pos] = std::numeric_limits<double>::infinity();
    EXPECT_EQ(scalar_table().all_finite(x.data(), n), avx2_table()->all_finite(x.data(), n));
    EXPECT_FALSE(avx2_table()->all_finite(x.data(), n));
    x[pos] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(avx2_table()->all_finite(x.data(), n));
  }
}

// Lengths straddle the 4-wide and 8-wide vector bodies and their tails.
INSTANTIATE_TEST_SUITE_P(Lengths, KernelEquivalence,
                         ::testing::Values(0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 1000,
                                           1003));

TEST(KernelDispatch, ForceIsaSwitchesTable) {
  const Isa original = active().isa;
  force_isa(Isa::kScalar);
  EXPECT_EQ(active().isa, Isa::kScalar);
  if (isa_available(Isa::kAvx2)) {
    force_isa(Isa::kAvx2);
    EXPECT_EQ(active().isa, Isa::kAvx2);
  } else {
    EXPECT_THROW(force_isa(Isa::kAvx2), std::exception);
  }
  force_isa(original);
  EXPECT_EQ(isa_name(Isa::kScalar), "scalar");
  EXPECT_EQ(isa_name(Isa::kAvx2), "avx2");
}
