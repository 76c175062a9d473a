#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "picl/encoder/encoder.hpp"
#include "picl/encoder/prompt.hpp"
#include "picl/rng.hpp"

namespace picl::encoder {

/// One anchor with its positive and hard negatives, plus provenance so the
/// construction rules can be checked after the fact.
struct ContrastiveRow {
  std::string task;  // anchor task label
  std::size_t anchor_example = 0;
  std::size_t positive_example = 0;
  std::string anchor;
  std::string positive;
  std::string anchor_template_task;
  std::vector<std::string> hard_negatives;
  std::vector<std::string> hard_negative_tasks;           // underlying example task
  std::vector<std::string> hard_negative_template_tasks;  // always the anchor's template task
};

/// Easy negatives are implicit: the positives of other rows whose task label
/// differs from the anchor's.
struct ContrastiveBatch {
  std::vector<ContrastiveRow> rows;
  std::size_t n_hard = 0;
};

/// Task-indexed view over a training set and its prompt templates.
class ContrastiveDataset {
 public:
  /// Throws ConfigError with fewer than two tasks or when a task has no
  /// template.
  ContrastiveDataset(std::vector<TaskExample> examples, std::vector<PromptTemplate> templates);

  const std::vector<TaskExample>& examples() const { return examples_; }
  std::size_t n_tasks() const { return by_task_.size(); }

  ContrastiveBatch sample_batch(std::size_t batch_size, std::size_t n_hard, Rng& rng) const;

 private:
  std::vector<TaskExample> examples_;
  std::map<std::string, std::vector<std::size_t>> by_task_;
  std::map<std::string, std::vector<PromptTemplate>> templates_;
};

ContrastiveBatch build_contrastive_batch(const std::vector<TaskExample>& dataset,
                                         const std::vector<PromptTemplate>& templates,
                                         std::size_t batch_size, std::size_t n_hard, Rng& rng);

/// -log(e^pos / (e^pos + sum e^neg)), computed with a max shift. An empty
/// negative set gives exactly 0.
double contrastive_row_loss(double positive_logit, std::span<const double> negative_logits);

/// Mean row loss of the batch under the model.
double contrastive_loss(const EncoderModel& model, const ContrastiveBatch& batch);

/// Analytic gradient of contrastive_loss with respect to W, as a dense
/// row-major d x F matrix in double precision. Meant for small models.
std::vector<double> contrastive_gradient(const EncoderModel& model, const ContrastiveBatch& batch);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t n_checked = 0;
};

/// Compares the analytic gradient with central finite differences on a
/// sampled subset of W entries, in double precision. Half the samples come
/// from features active in the batch.
GradCheckResult grad_check_encoder(const EncoderModel& model, const ContrastiveBatch& batch,
                                   double eps, std::size_t n_samples = 64,
                                   std::uint64_t seed = 0);

struct EncoderTrainConfig {
  std::uint32_t d = 64;
  HashSpec hash;
  double init_scale = 0.1;
  double lr = 0.5;
  std::uint32_t batch = 64;
  std::uint32_t n_hard = 4;
  std::uint32_t epochs = 1;
  /// Overrides epochs when non-zero.
  std::uint32_t steps = 0;
  std::uint64_t seed = 0;
};

struct EncoderTrainResult {
  EncoderModel model;
  std::vector<double> losses;  // one per step
};

/// Plain SGD on the contrastive loss with sparse column updates.
/// Throws on a non-finite loss, naming the step.
EncoderTrainResult train_encoder(const std::vector<TaskExample>& dataset,
                                 const std::vector<PromptTemplate>& templates,
                                 const EncoderTrainConfig& config,
                                 const std::function<void(std::size_t, double)>& on_step = {});

/// Continues training an existing model (lr = 0 leaves it unchanged).
EncoderTrainResult train_encoder(EncoderModel model, const ContrastiveDataset& data,
                                 const EncoderTrainConfig& config,
                                 const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace picl::encoder
