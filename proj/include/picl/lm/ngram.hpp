#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "picl/lm/scorer.hpp"

namespace picl::lm {

/// Interpolated n-gram model. Each order contributes its maximum-likelihood
/// estimate; an order whose context was never seen defers to the next lower
/// order. The unigram term gives every never-seen vocabulary id probability
/// 1/V and scales the observed frequencies by the remaining mass. Sequences
/// start after order-1 document-boundary tokens.
class NGramLm final : public GenerativeLm {
 public:
  /// lambdas[o] weights order o+1; they must sum to 1 within 1e-9.
  static NGramLm train(corpus::Tokenizer tokenizer, std::span<const std::string> texts,
                       std::size_t order, std::vector<double> lambdas);

  std::size_t order() const { return order_; }
  const std::vector<double>& lambdas() const { return lambdas_; }

  /// P(token | history); only the last order-1 history ids matter and
  /// missing positions are document boundaries.
  double prob(std::span<const TokenId> history, TokenId token) const;

  Score logprob(std::string_view text) override;
  Score logprob_ids(std::span<const TokenId> ids) const;
  const corpus::Tokenizer& tokenizer() const override { return tok_; }
  void next_logprobs(std::span<const TokenId> prefix, std::span<double> out) const override;
  std::string describe() const override;

  void save(const std::filesystem::path& path) const;
  static NGramLm load(const std::filesystem::path& path);

 private:
  struct Context {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint32_t> next;
  };
  // order o >= 2 is keyed by the packed o-1 context ids
  using Table = std::unordered_map<std::string, Context>;

  static std::string key(std::span<const TokenId> ctx);
  double order_prob(std::size_t o, std::span<const TokenId> padded_history, TokenId token) const;

  corpus::Tokenizer tok_;
  std::size_t order_ = 1;
  std::vector<double> lambdas_;
  std::vector<std::uint64_t> unigram_;
  std::uint64_t unigram_total_ = 0;
  std::size_t unseen_types_ = 0;
  std::vector<Table> tables_;  // tables_[o - 2] for o in [2, order]
};

}  // namespace picl::lm
