#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "picl/corpus/corpus.hpp"
#include "picl/lm/scorer.hpp"
#include "picl/retrieval/retrieval.hpp"

namespace picl::constructor {

inline constexpr std::size_t kDefaultBudget = 1024;
inline constexpr double kNoFilter = -std::numeric_limits<double>::infinity();

struct PretrainInstance {
  std::uint64_t id = 0;
  ParagraphId query_id = 0;
  std::vector<ParagraphId> demo_ids;  // text order: least similar first
  std::string text;
  std::uint32_t token_count = 0;
  std::optional<double> score;
  bool operator==(const PretrainInstance&) const = default;
};

/// Packs z0 and its neighbours into "z_k\n...\nz_1\nz0". Neighbours are
/// admitted most similar first until the next one would push the joined token
/// count past `budget`; exact duplicates of z0 or of an admitted demo are
/// skipped. Returns nullopt when z0 alone exceeds the budget.
std::optional<PretrainInstance> construct_instance(const corpus::Paragraph& z0,
                                                   const retrieval::RetrievalResult& neighbors,
                                                   const corpus::ParagraphStore& store,
                                                   std::size_t budget = kDefaultBudget);

/// (sum of standalone segment log-probs subtracted from the log-prob of the
/// "\n"-joined text) divided by the joined token count.
double informativeness_score(std::span<const std::string> segments, lm::LmScorer& scorer);
double informativeness_score(const PretrainInstance& inst, const corpus::ParagraphStore& store,
                             lm::LmScorer& scorer);

/// Segment texts of an instance in text order, z0 last.
std::vector<std::string> segments_of(const PretrainInstance& inst,
                                     const corpus::ParagraphStore& store);

struct FilterResult {
  std::vector<PretrainInstance> retained;  // ids renumbered densely
  std::size_t n_candidates = 0;
};

/// Keeps instances with score > delta. Every instance must carry a score.
FilterResult filter_instances(std::vector<PretrainInstance> instances, double delta);

struct BuildManifest {
  std::size_t n_queries = 0;
  std::size_t n_over_budget = 0;
  std::size_t n_candidates = 0;
  std::size_t n_retained = 0;
  double retained_fraction = 0.0;
  double mean_demos_per_instance = 0.0;
  double mean_instance_tokens = 0.0;
  std::string strategy;
  std::size_t k = 0;
  std::size_t budget = 0;
  double delta = kNoFilter;

  nlohmann::json to_json() const;
  static BuildManifest from_json(const nlohmann::json& j);
};

/// Summary fields computed from a retained set.
void summarize(BuildManifest& m, std::span<const PretrainInstance> retained);

using lm::ScorerFactory;

/// One candidate per retrieval result, in ascending query id. Each worker
/// owns one scorer from the factory; a null factory leaves scores empty.
std::vector<PretrainInstance> construct_candidates(
    const corpus::ParagraphStore& store, const std::vector<retrieval::RetrievalResult>& results,
    std::size_t budget, const ScorerFactory& scorer, unsigned threads = 1,
    std::size_t* n_over_budget = nullptr);

struct BuildOutput {
  std::vector<PretrainInstance> instances;
  BuildManifest manifest;
};

BuildOutput build_pretrain_corpus(const corpus::ParagraphStore& store,
                                  const std::vector<retrieval::RetrievalResult>& results,
                                  std::size_t k, std::size_t budget, double delta,
                                  const ScorerFactory& scorer, unsigned threads = 1);

void save_instances_jsonl(const std::filesystem::path& path,
                          std::span<const PretrainInstance> instances);
std::vector<PretrainInstance> load_instances_jsonl(const std::filesystem::path& path);

/// "-inf" and "inf" are accepted alongside ordinary numbers.
double parse_delta(std::string_view s);
std::string format_delta(double delta);

}  // namespace picl::constructor
