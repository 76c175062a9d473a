#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "picl/common.hpp"

namespace picl::vecindex {

/// n x d row-major float matrix with one paragraph id per row.
struct EmbeddingMatrix {
  std::uint32_t d = 0;
  std::vector<ParagraphId> ids;
  std::vector<float> data;

  std::size_t n() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * d, d}; }

  /// Throws FormatError on size mismatch or duplicate ids.
  void validate() const;

  static EmbeddingMatrix from_rows(std::vector<ParagraphId> ids,
                                   const std::vector<std::vector<float>>& rows);

  /// Writes the binary matrix to `path` and the row -> id sidecar to
  /// ids_sidecar(path).
  void save(const std::filesystem::path& path) const;
  static EmbeddingMatrix load(const std::filesystem::path& path);
  static std::filesystem::path ids_sidecar(const std::filesystem::path& path);

  bool operator==(const EmbeddingMatrix&) const = default;
};

struct SearchResult {
  std::vector<ParagraphId> ids;
  std::vector<float> scores;
  std::size_t size() const { return ids.size(); }
  bool operator==(const SearchResult&) const = default;
};

class ExactIndex {
 public:
  explicit ExactIndex(EmbeddingMatrix matrix);
  const EmbeddingMatrix& matrix() const { return m_; }
  std::size_t size() const { return m_.n(); }
  std::uint32_t dim() const { return m_.d; }

 private:
  EmbeddingMatrix m_;
};

ExactIndex build_exact(EmbeddingMatrix matrix);

/// Top-k rows by dot product, excluding `exclude`; ties by ascending id.
SearchResult search_exact(const ExactIndex& index, std::span<const float> query, std::size_t k,
                          std::span<const ParagraphId> exclude = {});

struct KMeansResult {
  std::vector<float> centroids;  // k_c x d
  std::vector<double> objective;  // sum of squared distances after each assignment
};

/// Lloyd's algorithm from k_c distinct random rows. Empty clusters are
/// re-seeded from the point farthest from its centroid.
KMeansResult kmeans(std::span<const float> vectors, std::uint32_t d, std::size_t k_c,
                    std::size_t iters, std::uint64_t seed, unsigned threads = 1);

struct IvfList {
  std::vector<ParagraphId> ids;
  std::vector<float> vectors;  // ids.size() x d
  bool operator==(const IvfList&) const = default;
};

class IvfIndex {
 public:
  std::uint32_t d = 0;
  std::vector<float> centroids;
  std::vector<IvfList> lists;
  std::size_t iters = 0;
  std::uint64_t seed = 0;

  std::size_t k_c() const { return lists.size(); }
  std::size_t size() const;

  void save(const std::filesystem::path& path) const;
  static IvfIndex load(const std::filesystem::path& path);
  bool operator==(const IvfIndex&) const = default;
};

IvfIndex build_ivf(const EmbeddingMatrix& matrix, std::size_t k_c, std::size_t iters,
                   std::uint64_t seed, unsigned threads = 1);

SearchResult search_ivf(const IvfIndex& index, std::span<const float> query, std::size_t k,
                        std::size_t n_probe, std::span<const ParagraphId> exclude = {});

/// Fraction of the exact ids recovered by the approximate result.
double recall_at_k(const SearchResult& approx, const SearchResult& exact);

std::size_t default_k_c(std::size_t n);
std::size_t default_n_probe(std::size_t k_c);

}  // namespace picl::vecindex
