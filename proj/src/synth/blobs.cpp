#include "picl/synth/blobs.hpp"

#include <cmath>

#include "picl/rng.hpp"

namespace picl::synth {

vecindex::EmbeddingMatrix two_blobs(const BlobSpec& spec) {
  Rng rng(spec.seed);
  const std::uint32_t d = spec.d;
  const std::uint32_t r = std::min(spec.intrinsic, d);
  // random directions spanning the within-blob subspace, scaled so the
  // total within-blob variance is d either way
  std::vector<double> basis(static_cast<std::size_t>(r) * d);
  for (auto& b : basis) b = standard_normal(rng) / std::sqrt(double(d));
  const double scale = std::sqrt(double(d) / double(r));
  vecindex::EmbeddingMatrix m;
  m.d = d;
  m.data.reserve(spec.n * d);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < spec.n; ++i) {
    m.ids.push_back(i);
    std::fill(x.begin(), x.end(), 0.0);
    x[0] = i < spec.n / 2 ? spec.separation : -spec.separation;
    for (std::uint32_t a = 0; a < r; ++a) {
      const double z = scale * standard_normal(rng);
      for (std::uint32_t j = 0; j < d; ++j) x[j] += z * basis[a * d + j];
    }
    for (std::uint32_t j = 0; j < d; ++j)
      m.data.push_back(static_cast<float>(x[j] + spec.noise * standard_normal(rng)));
  }
  return m;
}

}  // namespace picl::synth
