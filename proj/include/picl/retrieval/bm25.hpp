#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "picl/common.hpp"
#include "picl/corpus/corpus.hpp"

namespace picl::retrieval {

struct Posting {
  ParagraphId id = 0;
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
  bool operator==(const Bm25Params&) const = default;
};

/// Okapi BM25 over lowercased word tokens (newlines excluded).
class Bm25Index {
 public:
  static Bm25Index build(const corpus::ParagraphStore& store, Bm25Params params = {});

  /// Lowercased terms as indexed.
  static std::vector<std::string> terms_of(std::string_view text);

  std::span<const Posting> postings(const std::string& term) const;
  double idf(const std::string& term) const;
  double score(std::span<const std::string> query_terms, ParagraphId id) const;

  /// Scores every indexed paragraph at once; zeros where nothing matches.
  std::vector<double> score_all(std::span<const std::string> query_terms) const;

  std::size_t n_docs() const { return doc_len_.size(); }
  double avgdl() const { return avgdl_; }
  std::uint32_t doc_len(ParagraphId id) const;
  const Bm25Params& params() const { return params_; }

  void save(const std::filesystem::path& path) const;
  static Bm25Index load(const std::filesystem::path& path);
  bool operator==(const Bm25Index&) const = default;

 private:
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<std::uint32_t> doc_len_;  // indexed by dense paragraph id
  double avgdl_ = 0.0;
  Bm25Params params_;
};

/// Single-document score; throws ConfigError for an unknown id.
double bm25_score(const Bm25Index& index, std::span<const std::string> query_terms,
                  ParagraphId id);

}  // namespace picl::retrieval
