#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "picl/lm/scorer.hpp"
#include "picl/rng.hpp"

namespace picl::lm {

struct NeuralLmShape {
  std::uint32_t vocab = 0;
  std::uint32_t context = 8;
  std::uint32_t embed = 16;
  std::uint32_t hidden = 32;
  /// Adds a hidden-layer input fed by the mean embedding of every token
  /// older than the context window.
  bool summary = false;
  bool operator==(const NeuralLmShape&) const = default;
};

/// Fixed-window feedforward LM: concatenated context embeddings, one tanh
/// layer, softmax output. Sequences are scored after an implicit
/// document-boundary token; missing context slots are boundaries too.
template <typename T>
class BasicNeuralLm final : public GenerativeLm {
 public:
  BasicNeuralLm(corpus::Tokenizer tokenizer, NeuralLmShape shape);
  static BasicNeuralLm random(corpus::Tokenizer tokenizer, NeuralLmShape shape, double scale,
                              std::uint64_t seed);

  const NeuralLmShape& shape() const { return shape_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  /// Rows of the token embedding table.
  std::span<const T> embedding(TokenId id) const;

  /// Sum of -log P(seq[t] | seq[<t]) over t in [from, to). When `grad` is
  /// non-empty, adds weight * d(sum)/d(params) into it.
  double accumulate(std::span<const TokenId> seq, std::size_t from, std::size_t to,
                    std::span<T> grad = {}, T weight = T(1)) const;

  /// Softmax over the vocabulary for the token at position `pos` of `seq`.
  void distribution(std::span<const TokenId> seq, std::size_t pos, std::span<double> out) const;

  Score logprob(std::string_view text) override;
  const corpus::Tokenizer& tokenizer() const override { return tok_; }
  void next_logprobs(std::span<const TokenId> prefix, std::span<double> out) const override;
  Capabilities capabilities() const override { return {true, true, true}; }
  std::string describe() const override;

  template <typename U>
  BasicNeuralLm<U> cast() const {
    BasicNeuralLm<U> out(tok_, shape_);
    auto dst = out.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

  void save(const std::filesystem::path& path) const;
  static BasicNeuralLm load(const std::filesystem::path& path);
  bool operator==(const BasicNeuralLm& o) const { return shape_ == o.shape_ && params_ == o.params_; }

 private:
  struct Layout {
    std::size_t emb, w1, b1, ws, w2, b2, total;
  };
  static Layout layout_of(const NeuralLmShape& s);
  struct Workspace;
  void forward(std::span<const TokenId> seq, std::size_t pos, std::span<const T> summary,
               Workspace& ws) const;

  corpus::Tokenizer tok_;
  NeuralLmShape shape_;
  Layout lay_;
  std::vector<T> params_;
};

using NeuralLm = BasicNeuralLm<float>;

/// Boundary token followed by the encoded text.
std::vector<TokenId> to_sequence(const corpus::Tokenizer& tok, std::string_view text);

/// Mean negative log-likelihood over every position after the first;
/// throws ConfigError for sequences shorter than 2.
template <typename T>
double lm_loss(const BasicNeuralLm<T>& model, std::span<const TokenId> seq);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t n_checked = 0;
};

/// Central differences on sampled parameters of the summed-then-averaged
/// loss over `batch`. Half of the samples are drawn from rows touched by
/// the batch.
GradCheckResult grad_check_lm(const BasicNeuralLm<double>& model,
                              const std::vector<std::vector<TokenId>>& batch, double eps,
                              std::size_t n_samples = 64, std::uint64_t seed = 0);

/// Target positions [from, to) of one sequence.
struct Window {
  std::size_t seq = 0;
  std::size_t from = 1;
  std::size_t to = 1;
};

/// Windows of `length` target positions with stride length/2 (at least 1).
std::vector<Window> make_windows(const std::vector<std::vector<TokenId>>& seqs, std::size_t length);

struct MixConfig {
  double alpha = 0.5;
  std::size_t steps = 1000;
  std::size_t batch = 8;  // windows drawn from each source per step
  double lr = 0.1;
  double clip = 5.0;      // gradient-norm clip, 0 disables
  std::size_t window = 0;  // 0 means the model's context size
  std::uint64_t seed = 0;
};

struct MixCurves {
  std::vector<double> icl_loss;  // per step, mean per-token
  std::vector<double> lm_loss;
};

/// SGD on alpha * L_icl + (1 - alpha) * L_lm, one batch from each source per
/// step. A source whose weight is zero may be empty; its curve is recorded
/// when it has data.
MixCurves train_mixed(NeuralLm& model, const std::vector<std::vector<TokenId>>& icl,
                      const std::vector<std::vector<TokenId>>& docs, const MixConfig& config,
                      const std::function<void(std::size_t, double, double)>& on_step = {});

}  // namespace picl::lm
