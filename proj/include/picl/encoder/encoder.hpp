#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "picl/encoder/features.hpp"

namespace picl::encoder {

struct EncoderTrainMeta {
  double lr = 0.0;
  std::uint32_t batch = 0;
  std::uint32_t n_hard = 0;
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
};

/// Linear task-semantics encoder: embed(text) = W * featurize(text) with W
/// of shape d x F. Similarity is the raw dot product of embeddings.
///
/// Weights are held feature-major (F rows of d floats) so that embedding a
/// sparse feature vector is a sequence of contiguous axpy updates. The model
/// file stores W row-major d x F.
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(std::uint32_t d, HashSpec spec);  // zero weights

  /// Gaussian N(0, scale^2) initialization from a seed.
  static EncoderModel random(std::uint32_t d, HashSpec spec, double scale, std::uint64_t seed);

  std::uint32_t dim() const { return d_; }
  std::uint32_t feature_dim() const { return spec_.dim; }
  const HashSpec& hash_spec() const { return spec_; }
  EncoderTrainMeta& train_meta() { return meta_; }
  const EncoderTrainMeta& train_meta() const { return meta_; }

  /// W[row, feature]
  float weight(std::uint32_t row, std::uint32_t feature) const {
    return wt_[static_cast<std::size_t>(feature) * d_ + row];
  }
  void set_weight(std::uint32_t row, std::uint32_t feature, float v) {
    wt_[static_cast<std::size_t>(feature) * d_ + row] = v;
  }
  /// Column W[:, feature] (contiguous).
  std::span<const float> column(std::uint32_t feature) const {
    return {wt_.data() + static_cast<std::size_t>(feature) * d_, d_};
  }
  std::span<float> column(std::uint32_t feature) {
    return {wt_.data() + static_cast<std::size_t>(feature) * d_, d_};
  }
  std::span<const float> feature_major() const { return wt_; }
  std::span<float> feature_major() { return wt_; }

  std::vector<float> embed(std::string_view text) const;
  std::vector<float> embed_features(const FeatureVector& fv) const;
  /// Writes the embedding into `out` (size d).
  void embed_features_into(const FeatureVector& fv, std::span<float> out) const;

  /// Embeds many texts, parallel over items, output rows in input order.
  std::vector<float> embed_batch(std::span<const std::string> texts, unsigned threads = 1) const;

  void save(const std::filesystem::path& path) const;
  static EncoderModel load(const std::filesystem::path& path);

  bool operator==(const EncoderModel& o) const {
    return d_ == o.d_ && spec_ == o.spec_ && wt_ == o.wt_;
  }

 private:
  std::uint32_t d_ = 0;
  HashSpec spec_;
  EncoderTrainMeta meta_;
  std::vector<float> wt_;
};

}  // namespace picl::encoder
