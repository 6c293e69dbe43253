#include "dru/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace dru::kern {
namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* detect() {
  // DRU_BACKEND=scalar overrides detection (used for deterministic runs)
  if (const char* env = std::getenv("DRU_BACKEND")) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_table();
  }
  if (const KernelTable* t = avx2_table(); t && cpu_has_avx2_fma()) return t;
  return &scalar_table();
}

const KernelTable*& active_ptr() {
  static const KernelTable* p = detect();
  return p;
}

}  // namespace

const KernelTable& active() { return *active_ptr(); }

Backend active_backend() {
  return active_ptr() == &scalar_table() ? Backend::scalar : Backend::avx2;
}

bool set_backend(Backend b) {
  if (b == Backend::scalar) {
    active_ptr() = &scalar_table();
    return true;
  }
  const KernelTable* t = avx2_table();
  if (t && cpu_has_avx2_fma()) {
    active_ptr() = t;
    return true;
  }
  return false;
}

}  // namespace dru::kern
