#include "picl/encoder/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "picl/common.hpp"
#include "picl/rng.hpp"

namespace picl::encoder {

void HashSpec::validate() const {
  if (dim == 0 || !std::has_single_bit(dim))
    throw ConfigError("feature dimension must be a power of two, got " + std::to_string(dim));
  if (ngram_min == 0 || ngram_min > ngram_max)
    throw ConfigError("n-gram orders must satisfy 1 <= min <= max");
}

FeatureVector featurize(const HashSpec& spec, std::string_view text) {
  spec.validate();
  FeatureVector fv;
  if (text.empty()) return fv;

  const std::uint64_t basis = fnv1a64({}, 0xcbf29ce484222325ULL ^ splitmix64(spec.seed));
  const std::uint32_t mask = spec.dim - 1;
  std::vector<std::uint32_t> hits;
  hits.reserve(text.size() * (spec.ngram_max - spec.ngram_min + 1));
  for (std::uint32_t n = spec.ngram_min; n <= spec.ngram_max; ++n) {
    if (text.size() < n) break;
    // order is folded into the hash so equal byte strings of different
    // orders cannot meet
    const std::uint64_t order_basis = splitmix64(basis + n);
    for (std::size_t i = 0; i + n <= text.size(); ++i)
      hits.push_back(static_cast<std::uint32_t>(fnv1a64(text.substr(i, n), order_basis)) & mask);
  }
  if (hits.empty()) return fv;
  std::sort(hits.begin(), hits.end());

  std::vector<double> counts;
  for (std::size_t i = 0; i < hits.size();) {
    std::size_t j = i;
    while (j < hits.size() && hits[j] == hits[i]) ++j;
    fv.indices.push_back(hits[i]);
    counts.push_back(static_cast<double>(j - i));
    i = j;
  }
  double norm = 0.0;
  for (double c : counts) norm += c * c;
  norm = std::sqrt(norm);
  fv.values.reserve(counts.size());
  for (double c : counts) fv.values.push_back(static_cast<float>(c / norm));
  return fv;
}

}  // namespace picl::encoder
