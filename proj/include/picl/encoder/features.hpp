#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace picl::encoder {

/// Hashed character n-gram featurizer settings. `dim` is the feature
/// dimension F and must be a power of two.
struct HashSpec {
  std::uint32_t dim = 1u << 14;
  std::uint32_t ngram_min = 3;
  std::uint32_t ngram_max = 5;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const HashSpec&) const = default;
};

/// Sparse feature vector: strictly increasing indices, positive values.
struct FeatureVector {
  std::vector<std::uint32_t> indices;
  std::vector<float> values;

  std::size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

/// Byte n-gram counts over the configured orders, hashed into `dim`
/// buckets and L2-normalized. Empty text yields the zero vector.
FeatureVector featurize(const HashSpec& spec, std::string_view text);

}  // namespace picl::encoder
