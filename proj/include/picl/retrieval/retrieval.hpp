#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "picl/corpus/corpus.hpp"
#include "picl/encoder/encoder.hpp"
#include "picl/retrieval/bm25.hpp"
#include "picl/vecindex/vecindex.hpp"

namespace picl::retrieval {

enum class Strategy { dense_exact, dense_ivf, bm25, random };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct RetrievalResult {
  ParagraphId query_id = 0;
  std::vector<ParagraphId> neighbor_ids;  // most similar first
  std::vector<float> scores;
  Strategy strategy = Strategy::random;
  bool operator==(const RetrievalResult&) const = default;
};

/// Borrowed handles; each strategy needs only its own.
struct Resources {
  const corpus::ParagraphStore* store = nullptr;
  const encoder::EncoderModel* encoder = nullptr;
  const vecindex::ExactIndex* exact = nullptr;
  const vecindex::IvfIndex* ivf = nullptr;
  std::size_t n_probe = 1;
  const Bm25Index* bm25 = nullptr;
  std::uint64_t seed = 0;
};

/// Top-k neighbours of `query`, never including the query itself.
RetrievalResult retrieve(Strategy strategy, const corpus::Paragraph& query, std::size_t k,
                         const Resources& res);

/// One result per store paragraph, in id order.
std::vector<RetrievalResult> retrieve_all(Strategy strategy, std::size_t k, const Resources& res,
                                          unsigned threads = 1);

void save_retrieval_jsonl(const std::filesystem::path& path,
                          const std::vector<RetrievalResult>& results);
std::vector<RetrievalResult> load_retrieval_jsonl(const std::filesystem::path& path);

/// Task label per paragraph id, from the labels of their source documents.
std::vector<std::optional<std::string>> paragraph_tasks(
    const corpus::ParagraphStore& store, const std::map<std::string, std::string>& doc_tasks);

struct PurityStats {
  double mean = 0.0;    // mean per-query fraction of neighbours sharing the query's task
  std::size_t n_queries = 0;
  std::size_t n_neighbors = 0;
};

/// Queries without a label or without neighbours are skipped.
PurityStats task_purity(const std::vector<RetrievalResult>& results,
                        const std::vector<std::optional<std::string>>& tasks);

}  // namespace picl::retrieval
