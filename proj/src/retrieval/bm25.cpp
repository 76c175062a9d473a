#include "picl/retrieval/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "picl/corpus/tokenizer.hpp"
#include "picl/io.hpp"

namespace picl::retrieval {

namespace {
constexpr std::string_view kMagic = "PICLBM25";
const std::vector<Posting> kEmpty;

std::vector<std::string> distinct(std::span<const std::string> terms) {
  std::set<std::string> s(terms.begin(), terms.end());
  return {s.begin(), s.end()};
}
}  // namespace

std::vector<std::string> Bm25Index::terms_of(std::string_view text) {
  std::vector<std::string> out;
  for (auto tok : corpus::split_tokens(text))
    if (tok != "\n") out.push_back(corpus::ascii_lower(tok));
  return out;
}

Bm25Index Bm25Index::build(const corpus::ParagraphStore& store, Bm25Params params) {
  if (store.empty()) throw ConfigError("cannot build BM25 over an empty store");
  Bm25Index idx;
  idx.params_ = params;
  idx.doc_len_.resize(store.size());
  double total = 0.0;
  for (const auto& p : store.paragraphs()) {
    const auto terms = terms_of(p.text);
    idx.doc_len_[p.id] = static_cast<std::uint32_t>(terms.size());
    total += double(terms.size());
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : terms) ++tf[t];
    // ids arrive in ascending order, so postings stay sorted
    for (const auto& [t, c] : tf) idx.postings_[t].push_back({p.id, c});
  }
  idx.avgdl_ = total / double(store.size());
  return idx;
}

std::span<const Posting> Bm25Index::postings(const std::string& term) const {
  const auto it = postings_.find(term);
  return it == postings_.end() ? std::span<const Posting>(kEmpty) : std::span<const Posting>(it->second);
}

double Bm25Index::idf(const std::string& term) const {
  const double n = double(n_docs());
  const double df = double(postings(term).size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::uint32_t Bm25Index::doc_len(ParagraphId id) const {
  if (id >= doc_len_.size()) throw ConfigError("paragraph " + std::to_string(id) + " is not indexed");
  return doc_len_[id];
}

double Bm25Index::score(std::span<const std::string> query_terms, ParagraphId id) const {
  const double len = double(doc_len(id));
  double s = 0.0;
  for (const auto& t : distinct(query_terms)) {
    const auto ps = postings(t);
    const auto it = std::lower_bound(ps.begin(), ps.end(), id,
                                     [](const Posting& p, ParagraphId v) { return p.id < v; });
    if (it == ps.end() || it->id != id) continue;
    const double tf = it->tf;
    s += idf(t) * tf * (params_.k1 + 1.0) /
         (tf + params_.k1 * (1.0 - params_.b + params_.b * len / avgdl_));
  }
  return s;
}

std::vector<double> Bm25Index::score_all(std::span<const std::string> query_terms) const {
  std::vector<double> out(n_docs(), 0.0);
  for (const auto& t : distinct(query_terms)) {
    const double w = idf(t);
    for (const auto& p : postings(t)) {
      const double tf = p.tf;
      out[p.id] += w * tf * (params_.k1 + 1.0) /
                   (tf + params_.k1 * (1.0 - params_.b + params_.b * double(doc_len_[p.id]) / avgdl_));
    }
  }
  return out;
}

void Bm25Index::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic(kMagic);
  w.put<double>(params_.k1);
  w.put<double>(params_.b);
  w.put<std::uint64_t>(doc_len_.size());
  w.put_array<std::uint32_t>(doc_len_);
  w.put<std::uint64_t>(postings_.size());
  for (const auto& [term, ps] : postings_) {
    w.put_string(term);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
    for (const auto& p : ps) {
      w.put<std::uint64_t>(p.id);
      w.put<std::uint32_t>(p.tf);
    }
  }
  w.close();
}

Bm25Index Bm25Index::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  Bm25Index idx;
  idx.params_.k1 = r.get<double>();
  idx.params_.b = r.get<double>();
  idx.doc_len_.resize(r.get<std::uint64_t>());
  r.get_array<std::uint32_t>(idx.doc_len_);
  const auto n_terms = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_terms; ++i) {
    auto term = r.get_string();
    auto& ps = idx.postings_[term];
    ps.resize(r.get<std::uint32_t>());
    for (auto& p : ps) {
      p.id = r.get<std::uint64_t>();
      p.tf = r.get<std::uint32_t>();
      if (p.id >= idx.doc_len_.size()) throw FormatError("posting id out of range in " + path.string());
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  if (idx.doc_len_.empty()) throw FormatError("empty BM25 index " + path.string());
  double total = 0.0;
  for (auto l : idx.doc_len_) total += l;
  idx.avgdl_ = total / double(idx.doc_len_.size());
  return idx;
}

double bm25_score(const Bm25Index& index, std::span<const std::string> query_terms,
                  ParagraphId id) {
  return index.score(query_terms, id);
}

}  // namespace picl::retrieval
