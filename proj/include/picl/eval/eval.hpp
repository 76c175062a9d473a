#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "picl/encoder/prompt.hpp"
#include "picl/lm/scorer.hpp"

namespace picl::eval {

using encoder::PromptTemplate;
using encoder::TaskExample;

enum class TaskKind { classification, generation };
std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

struct EvalTask {
  std::string name;
  TaskKind kind = TaskKind::classification;
  PromptTemplate prompt{"", "{input}{output}"};
  std::vector<std::string> labels;  // classification verbalizers, in tie-break order
  std::vector<TaskExample> train;   // demonstration pool
  std::vector<TaskExample> eval;

  /// Throws ConfigError on fewer than 2 labels or an example whose output is
  /// not a label (classification), or on empty pools.
  void validate() const;
};

/// {"name","kind","template","labels"?,"train":[{"input","output"}],"eval":[...]}
EvalTask load_task(const std::filesystem::path& path);
void save_task(const std::filesystem::path& path, const EvalTask& task);

/// Demonstrations rendered in full, joined by "\n", then the query rendered up
/// to its output slot with trailing whitespace removed.
std::string render_context(const EvalTask& task, std::span<const TaskExample> demos,
                           const TaskExample& query);

/// Text that follows the context when `label` fills the query's output slot:
/// the whitespace trimmed from the prefix, then the label.
std::string label_continuation(const EvalTask& task, const TaskExample& query,
                               std::string_view label);

/// Index of the continuation with the lowest per-token perplexity given
/// `context`; the first wins ties.
std::size_t ranking_classify(lm::LmScorer& scorer, std::string_view context,
                             std::span<const std::string> continuations);

struct ShotConfig {
  std::size_t n_shots = 4;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t max_eval_examples = 1000;
  std::size_t max_new_tokens = 32;  // generation only
};

struct EvalReport {
  std::string task;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;  // aligned with seeds
  double mean = 0.0;
  double std = 0.0;  // population

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Fills mean and population std from values.
void aggregate(EvalReport& r);

/// n_shots demonstrations drawn without replacement from the train pool with a
/// stream derived from (seed, task name).
std::vector<TaskExample> sample_demos(const EvalTask& task, std::size_t n_shots, std::uint64_t seed);

/// Ranking accuracy per seed. Each worker builds its own scorer.
EvalReport few_shot_eval(const EvalTask& task, const lm::ScorerFactory& scorer,
                         const ShotConfig& shots, unsigned threads = 1);

/// LCS F1 over lowercased whitespace tokens.
double rouge_l(std::string_view candidate, std::string_view reference);

/// Mean ROUGE-L of greedy continuations stopped at the first newline.
EvalReport generation_eval(const EvalTask& task, const lm::GenerativeLm& model,
                           const ShotConfig& shots, unsigned threads = 1);

struct DatasetPerplexity {
  std::string name;
  std::size_t n = 0;
  double mean_perplexity = 0.0;
};

struct Comparison {
  std::vector<DatasetPerplexity> rows;
  std::string to_csv() const;  // rows, then one "diff" row per ordered pair i<j
};

Comparison compare_datasets(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& sets, lm::LmScorer& scorer);

/// Columns task, seed, metric, value.
std::string reports_to_csv(std::span<const EvalReport> reports);

}  // namespace picl::eval
