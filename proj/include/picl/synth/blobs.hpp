#pragma once

#include <cstdint>

#include "picl/vecindex/vecindex.hpp"

namespace picl::synth {

struct BlobSpec {
  std::size_t n = 1000;
  std::uint32_t d = 32;
  /// Rank of the within-blob variation; d gives isotropic blobs.
  std::uint32_t intrinsic = 4;
  double separation = 10.0;  // blob centres at +-separation on axis 0
  double noise = 0.05;       // isotropic jitter added on top
  std::uint64_t seed = 0;
};

/// Rows [0, n/2) form blob A, the rest blob B; ids equal row numbers.
vecindex::EmbeddingMatrix two_blobs(const BlobSpec& spec);

}  // namespace picl::synth
