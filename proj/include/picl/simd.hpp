#pragma once

// Data-parallel float kernels used by the hot loops (embedding, index scans,
// k-means, neural LM). Each kernel has a scalar reference implementation and
// ISA-specific variants; the variant is picked once at startup from CPU
// features and may be pinned with PICL_SIMD=scalar|avx2|neon.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace picl::simd {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  std::string_view name;
  float (*dot)(const float* a, const float* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  float (*l2sq)(const float* a, const float* b, std::size_t n);
  // out[r] = dot(rows + r * dim, x) for r in [0, n_rows)
  void (*gemv)(const float* rows, std::size_t n_rows, std::size_t dim,
               const float* x, float* out);
};

const KernelTable& scalar_kernels();
const KernelTable* avx2_kernels();  // nullptr when not compiled in
const KernelTable* neon_kernels();  // nullptr when not compiled in

std::string_view kernels_for_name(Isa isa);

/// Variants that are both compiled in and supported by the running CPU.
std::vector<Isa> supported_isas();
const KernelTable& kernels_for(Isa isa);

/// Active table; selection honours PICL_SIMD on first use.
const KernelTable& active();
/// Pins the active table (tests and benchmarks). Throws if unsupported.
void set_active(Isa isa);

inline float dot(std::span<const float> a, std::span<const float> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline float l2sq(std::span<const float> a, std::span<const float> b) {
  return active().l2sq(a.data(), b.data(), a.size());
}

// Generic overloads so templated numeric code can run in double precision
// for gradient checks; these are plain loops.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace picl::simd
