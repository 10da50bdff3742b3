#pragma once

#include <cstddef>
#include <string_view>

// Flat double-precision kernels used by every inner loop of the simulator.
//
// Each kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant. The active table is chosen once at startup from CPU features and
// may be overridden with DLSIM_SIMD=scalar|avx2.
//
// Elementwise kernels (axpy, scale, add, sub, axpby) are bit-identical across
// variants: the AVX2 code uses separate multiply and add, never FMA, and the
// build disables floating-point contraction. Reductions (dot, sum_squares)
// use a different association order in the vector variant and agree with the
// scalar reference only to rounding.

namespace dlsim::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] = a * x[i] + b * y[i]
  void (*axpby)(double a, const double* x, double b, double* y, std::size_t n);
  // x[i] *= a
  void (*scale)(double a, double* x, std::size_t n);
  // out[i] = x[i] + y[i]
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  // out[i] = x[i] - y[i]
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum_squares)(const double* x, std::size_t n);
  // True when every entry is finite.
  bool (*all_finite)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();

// Returns nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();

bool isa_available(Isa isa);

// The table used by all library code.
const KernelTable& active();

// Test hook: switch the active table. Throws if the ISA is unavailable.
void force_isa(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace dlsim::kernels
