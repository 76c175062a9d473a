#include "picl/simd.hpp"

namespace picl::simd {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float l2sq_scalar(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void gemv_scalar(const float* rows, std::size_t n_rows, std::size_t dim,
                 const float* x, float* out) {
  for (std::size_t r = 0; r < n_rows; ++r) out[r] = dot_scalar(rows + r * dim, x, dim);
}

constexpr KernelTable kScalar{Isa::scalar, "scalar", dot_scalar, axpy_scalar,
                              l2sq_scalar, gemv_scalar};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace picl::simd
