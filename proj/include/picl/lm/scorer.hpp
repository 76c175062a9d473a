#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "picl/corpus/tokenizer.hpp"

namespace picl::lm {

using corpus::TokenId;

struct Score {
  double logprob = 0.0;  // natural log, <= 0
  std::size_t num_tokens = 0;
};

struct Capabilities {
  bool scorable = true;
  bool trainable = false;
  bool generative = false;
};

/// Summed token log-probability of arbitrary text. Implementations are
/// deterministic for a fixed model state; an instance is used by one thread
/// at a time.
class LmScorer {
 public:
  virtual ~LmScorer() = default;
  virtual Score logprob(std::string_view text) = 0;
  virtual std::vector<Score> logprob_batch(std::span<const std::string> texts);
  virtual Capabilities capabilities() const { return {}; }
  virtual std::string describe() const = 0;
};

/// Builds one scorer per worker.
using ScorerFactory = std::function<std::unique_ptr<LmScorer>()>;

/// exp(-logprob / num_tokens); throws ConfigError for text without tokens.
double perplexity(LmScorer& scorer, std::string_view text);

/// Score of `continuation` given `context`, as the difference of the scores
/// of context + continuation and of context alone.
Score conditional_logprob(LmScorer& scorer, std::string_view context, std::string_view continuation);

/// Every token has probability 1/V.
class UniformScorer final : public LmScorer {
 public:
  explicit UniformScorer(std::size_t vocab_size);
  Score logprob(std::string_view text) override;
  std::string describe() const override;

 private:
  std::size_t v_;
};

/// Add-one unigram model over the tokenizer vocabulary. Newline tokens are
/// not scored, so the score of "a\nb" is the sum of the scores of "a" and "b".
class UnigramScorer final : public LmScorer {
 public:
  UnigramScorer(corpus::Tokenizer tokenizer, std::span<const std::string> texts);
  Score logprob(std::string_view text) override;
  double prob(TokenId id) const;
  std::string describe() const override { return "unigram"; }

 private:
  corpus::Tokenizer tok_;
  std::vector<double> logp_;
};

/// Models that expose a full next-token distribution.
class GenerativeLm : public LmScorer {
 public:
  virtual const corpus::Tokenizer& tokenizer() const = 0;
  /// Log-probabilities of every vocabulary id after `prefix`. The prefix
  /// excludes the implicit document-boundary start.
  virtual void next_logprobs(std::span<const TokenId> prefix, std::span<double> out) const = 0;
  Capabilities capabilities() const override { return {true, false, true}; }
};

/// Appends the argmax token (lowest id on ties) until `stop` is produced or
/// max_new_tokens are generated; the stop token is not included.
std::string greedy_decode(const GenerativeLm& model, std::string_view prompt,
                          std::size_t max_new_tokens, std::optional<TokenId> stop = std::nullopt);

}  // namespace picl::lm
