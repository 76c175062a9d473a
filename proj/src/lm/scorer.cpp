#include "picl/lm/scorer.hpp"

#include <cmath>

#include "picl/common.hpp"

namespace picl::lm {

std::vector<Score> LmScorer::logprob_batch(std::span<const std::string> texts) {
  std::vector<Score> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(logprob(t));
  return out;
}

double perplexity(LmScorer& scorer, std::string_view text) {
  const auto s = scorer.logprob(text);
  if (s.num_tokens == 0) throw ConfigError("perplexity of an empty text is undefined");
  return std::exp(-s.logprob / double(s.num_tokens));
}

Score conditional_logprob(LmScorer& scorer, std::string_view context, std::string_view continuation) {
  std::string joined(context);
  joined += continuation;
  const auto full = scorer.logprob(joined);
  const auto ctx = scorer.logprob(context);
  return {full.logprob - ctx.logprob,
          full.num_tokens >= ctx.num_tokens ? full.num_tokens - ctx.num_tokens : 0};
}

UniformScorer::UniformScorer(std::size_t vocab_size) : v_(vocab_size) {
  if (v_ == 0) throw ConfigError("uniform scorer needs a positive vocabulary size");
}

Score UniformScorer::logprob(std::string_view text) {
  const auto n = corpus::count_tokens(text);
  return {double(n) * -std::log(double(v_)), n};
}

std::string UniformScorer::describe() const { return "uniform:" + std::to_string(v_); }

UnigramScorer::UnigramScorer(corpus::Tokenizer tokenizer, std::span<const std::string> texts)
    : tok_(std::move(tokenizer)) {
  std::vector<double> counts(tok_.vocab_size(), 1.0);
  double total = double(counts.size());
  for (const auto& t : texts)
    for (auto id : tok_.encode(t)) {
      if (id == corpus::Tokenizer::kNewline) continue;
      counts[id] += 1.0;
      total += 1.0;
    }
  logp_.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) logp_[i] = std::log(counts[i] / total);
}

double UnigramScorer::prob(TokenId id) const { return std::exp(logp_.at(id)); }

Score UnigramScorer::logprob(std::string_view text) {
  Score s;
  for (auto id : tok_.encode(text)) {
    if (id == corpus::Tokenizer::kNewline) continue;
    s.logprob += logp_[id];
    ++s.num_tokens;
  }
  return s;
}

std::string greedy_decode(const GenerativeLm& model, std::string_view prompt,
                          std::size_t max_new_tokens, std::optional<TokenId> stop) {
  const auto& tok = model.tokenizer();
  auto ids = tok.encode(prompt);
  const std::size_t start = ids.size();
  std::vector<double> lp(tok.vocab_size());
  for (std::size_t i = 0; i < max_new_tokens; ++i) {
    model.next_logprobs(ids, lp);
    TokenId best = 0;
    for (TokenId v = 1; v < lp.size(); ++v)
      if (lp[v] > lp[best]) best = v;
    if (stop && best == *stop) break;
    ids.push_back(best);
  }
  return tok.decode(std::span<const TokenId>(ids).subspan(start));
}

}  // namespace picl::lm
