#include <atomic>
#include <cstdlib>
#include <string>

#include "picl/common.hpp"
#include "picl/simd.hpp"

namespace picl::simd {

#ifndef PICL_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif
#ifndef PICL_HAVE_NEON
const KernelTable* neon_kernels() { return nullptr; }
#endif

namespace {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(PICL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
      return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
      return neon_kernels() != nullptr;
  }
  return false;
}

const KernelTable& select_default() {
  if (const char* env = std::getenv("PICL_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
      if (kernels_for_name(isa) == want) {
        if (!cpu_supports(isa))
          throw ConfigError("PICL_SIMD=" + want + " is not supported on this CPU");
        return kernels_for(isa);
      }
    }
    throw ConfigError("PICL_SIMD must be one of scalar, avx2, neon (got " + want + ")");
  }
  if (cpu_supports(Isa::avx2)) return *avx2_kernels();
  if (cpu_supports(Isa::neon)) return *neon_kernels();
  return scalar_kernels();
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

std::string_view kernels_for_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "?";
}

std::vector<Isa> supported_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
    if (cpu_supports(isa)) out.push_back(isa);
  return out;
}

const KernelTable& kernels_for(Isa isa) {
  if (!cpu_supports(isa))
    throw ConfigError("SIMD variant " + std::string(kernels_for_name(isa)) +
                      " is not available");
  switch (isa) {
    case Isa::avx2: return *avx2_kernels();
    case Isa::neon: return *neon_kernels();
    case Isa::scalar: break;
  }
  return scalar_kernels();
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (!t) {
    t = &select_default();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void set_active(Isa isa) { g_active.store(&kernels_for(isa), std::memory_order_release); }

}  // namespace picl::simd
