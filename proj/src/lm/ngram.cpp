#include "picl/lm/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "picl/common.hpp"
#include "picl/io.hpp"

namespace picl::lm {

namespace {
constexpr std::string_view kMagic = "PICLNGM1";
}

std::string NGramLm::key(std::span<const TokenId> ctx) {
  return {reinterpret_cast<const char*>(ctx.data()), ctx.size_bytes()};
}

NGramLm NGramLm::train(corpus::Tokenizer tokenizer, std::span<const std::string> texts,
                       std::size_t order, std::vector<double> lambdas) {
  if (order == 0) throw ConfigError("n-gram order must be >= 1");
  if (lambdas.size() != order)
    throw ConfigError("need " + std::to_string(order) + " interpolation weights, got " +
                      std::to_string(lambdas.size()));
  double sum = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("interpolation weights must be non-negative");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("interpolation weights must sum to 1");
  if (texts.empty()) throw ConfigError("cannot train an n-gram model on an empty corpus");

  NGramLm m;
  m.tok_ = std::move(tokenizer);
  m.order_ = order;
  m.lambdas_ = std::move(lambdas);
  m.unigram_.assign(m.tok_.vocab_size(), 0);
  m.tables_.resize(order - 1);
  const std::size_t pad = order - 1;
  for (const auto& t : texts) {
    std::vector<TokenId> ids(pad, corpus::Tokenizer::kDocBoundary);
    const auto enc = m.tok_.encode(t);
    ids.insert(ids.end(), enc.begin(), enc.end());
    for (std::size_t i = pad; i < ids.size(); ++i) {
      ++m.unigram_[ids[i]];
      ++m.unigram_total_;
      for (std::size_t o = 2; o <= order; ++o) {
        auto& ctx = m.tables_[o - 2][key(std::span<const TokenId>(ids).subspan(i - (o - 1), o - 1))];
        ++ctx.total;
        ++ctx.next[ids[i]];
      }
    }
  }
  if (m.unigram_total_ == 0) throw ConfigError("cannot train an n-gram model on text without tokens");
  m.unseen_types_ = std::count(m.unigram_.begin(), m.unigram_.end(), 0u);
  return m;
}

double NGramLm::order_prob(std::size_t o, std::span<const TokenId> hist, TokenId token) const {
  // hist holds exactly order-1 ids, most recent last
  for (; o >= 2; --o) {
    const auto& table = tables_[o - 2];
    const auto it = table.find(key(hist.subspan(hist.size() - (o - 1))));
    if (it == table.end()) continue;
    const auto n = it->second.next.find(token);
    return n == it->second.next.end() ? 0.0 : double(n->second) / double(it->second.total);
  }
  const double v = double(unigram_.size());
  if (unigram_[token] == 0) return 1.0 / v;
  return double(unigram_[token]) / double(unigram_total_) * (1.0 - double(unseen_types_) / v);
}

double NGramLm::prob(std::span<const TokenId> history, TokenId token) const {
  if (token >= unigram_.size()) throw ConfigError("token id outside the vocabulary");
  std::vector<TokenId> hist(order_ - 1, corpus::Tokenizer::kDocBoundary);
  const std::size_t take = std::min(history.size(), hist.size());
  std::copy(history.end() - take, history.end(), hist.end() - take);
  double p = 0.0;
  for (std::size_t o = 1; o <= order_; ++o)
    if (lambdas_[o - 1] > 0.0) p += lambdas_[o - 1] * order_prob(o, hist, token);
  return p;
}

Score NGramLm::logprob_ids(std::span<const TokenId> ids) const {
  Score s;
  for (std::size_t i = 0; i < ids.size(); ++i) s.logprob += std::log(prob(ids.first(i), ids[i]));
  s.num_tokens = ids.size();
  return s;
}

Score NGramLm::logprob(std::string_view text) { return logprob_ids(tok_.encode(text)); }

void NGramLm::next_logprobs(std::span<const TokenId> prefix, std::span<double> out) const {
  for (TokenId v = 0; v < out.size(); ++v) out[v] = std::log(prob(prefix, v));
}

std::string NGramLm::describe() const { return "ngram:" + std::to_string(order_); }

void NGramLm::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic(kMagic);
  w.put_string(tok_.to_json().dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(order_));
  w.put_array<double>(lambdas_);
  w.put_array<std::uint64_t>(unigram_);
  for (const auto& table : tables_) {
    // sorted for byte-stable output
    std::vector<const std::pair<const std::string, Context>*> rows;
    for (const auto& kv : table) rows.push_back(&kv);
    std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->first < b->first; });
    w.put<std::uint64_t>(rows.size());
    for (const auto* kv : rows) {
      w.put_string(kv->first);
      std::vector<std::pair<TokenId, std::uint32_t>> next(kv->second.next.begin(), kv->second.next.end());
      std::sort(next.begin(), next.end());
      w.put<std::uint32_t>(static_cast<std::uint32_t>(next.size()));
      for (const auto& [t, c] : next) {
        w.put<std::uint32_t>(t);
        w.put<std::uint32_t>(c);
      }
    }
  }
  w.close();
}

NGramLm NGramLm::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  NGramLm m;
  m.tok_ = corpus::Tokenizer::from_json(nlohmann::json::parse(r.get_string()));
  m.order_ = r.get<std::uint32_t>();
  if (m.order_ == 0) throw FormatError("bad n-gram order in " + path.string());
  m.lambdas_.resize(m.order_);
  r.get_array<double>(m.lambdas_);
  m.unigram_.resize(m.tok_.vocab_size());
  r.get_array<std::uint64_t>(m.unigram_);
  m.unigram_total_ = std::accumulate(m.unigram_.begin(), m.unigram_.end(), std::uint64_t{0});
  m.unseen_types_ = std::count(m.unigram_.begin(), m.unigram_.end(), 0u);
  m.tables_.resize(m.order_ - 1);
  for (auto& table : m.tables_) {
    const auto rows = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < rows; ++i) {
      auto& ctx = table[r.get_string()];
      const auto n = r.get<std::uint32_t>();
      for (std::uint32_t j = 0; j < n; ++j) {
        const auto t = r.get<std::uint32_t>();
        const auto c = r.get<std::uint32_t>();
        ctx.next[t] = c;
        ctx.total += c;
      }
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  return m;
}

}  // namespace picl::lm
