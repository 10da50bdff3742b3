#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dlsim/kernels.hpp"

namespace dlsim::kernels {

#if defined(DLSIM_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;
}
#endif

namespace {

bool cpu_has_avx2() {
#if defined(DLSIM_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* select_initial() {
  const char* env = std::getenv("DLSIM_SIMD");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{select_initial()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() {
#if defined(DLSIM_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2::kTable : nullptr;
#else
  return nullptr;
#endif
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return avx2_table() != nullptr;
  }
  return false;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      current().store(&scalar_table());
      return;
    case Isa::kAvx2:
      if (const KernelTable* t = avx2_table()) {
        current().store(t);
        return;
      }
      throw std::runtime_error("AVX2 kernels unavailable on this build or CPU");
  }
}

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

}  // namespace dlsim::kernels
