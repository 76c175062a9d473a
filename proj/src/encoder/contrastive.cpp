#include "picl/encoder/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "picl/common.hpp"
#include "picl/simd.hpp"

namespace picl::encoder {

ContrastiveDataset::ContrastiveDataset(std::vector<TaskExample> examples,
                                       std::vector<PromptTemplate> templates)
    : examples_(std::move(examples)) {
  for (std::size_t i = 0; i < examples_.size(); ++i) by_task_[examples_[i].task].push_back(i);
  if (by_task_.size() < 2) throw ConfigError("need >= 2 tasks for contrastive training");
  for (auto& t : templates) templates_[t.task()].push_back(std::move(t));
  for (const auto& [task, idx] : by_task_)
    if (!templates_.contains(task)) throw ConfigError("no prompt template for task '" + task + "'");
}

ContrastiveBatch ContrastiveDataset::sample_batch(std::size_t batch_size, std::size_t n_hard,
                                                  Rng& rng) const {
  constexpr int kMaxRetries = 100;
  ContrastiveBatch batch;
  batch.n_hard = n_hard;
  batch.rows.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::size_t anchor = 0;
    int tries = 0;
    for (;; ++tries) {
      if (tries >= kMaxRetries)
        throw ConfigError("could not sample an anchor whose task has >= 2 examples");
      anchor = uniform_index(rng, examples_.size());
      if (by_task_.at(examples_[anchor].task).size() >= 2) break;
    }
    const TaskExample& a = examples_[anchor];
    const auto& same = by_task_.at(a.task);
    std::size_t pos = same[uniform_index(rng, same.size() - 1)];
    if (pos == anchor) pos = same.back();  // skip the anchor without bias

    const auto& a_templates = templates_.at(a.task);
    const PromptTemplate& a_tmpl = a_templates[uniform_index(rng, a_templates.size())];
    const auto& p_templates = templates_.at(a.task);
    const PromptTemplate& p_tmpl = p_templates[uniform_index(rng, p_templates.size())];

    ContrastiveRow row;
    row.task = a.task;
    row.anchor_example = anchor;
    row.positive_example = pos;
    row.anchor = render_prompt(a_tmpl, a);
    row.positive = render_prompt(p_tmpl, examples_[pos]);
    row.anchor_template_task = a_tmpl.task();

    const std::size_t n_other = examples_.size() - same.size();
    for (std::size_t h = 0; h < n_hard; ++h) {
      // uniform over examples of other tasks: draw a rank among them
      std::size_t rank = uniform_index(rng, n_other);
      std::size_t neg = 0;
      for (const auto& [task, idx] : by_task_) {
        if (task == a.task) continue;
        if (rank < idx.size()) {
          neg = idx[rank];
          break;
        }
        rank -= idx.size();
      }
      row.hard_negatives.push_back(render_prompt(a_tmpl, examples_[neg]));
      row.hard_negative_tasks.push_back(examples_[neg].task);
      row.hard_negative_template_tasks.push_back(a_tmpl.task());
    }
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

ContrastiveBatch build_contrastive_batch(const std::vector<TaskExample>& dataset,
                                         const std::vector<PromptTemplate>& templates,
                                         std::size_t batch_size, std::size_t n_hard, Rng& rng) {
  return ContrastiveDataset(dataset, templates).sample_batch(batch_size, n_hard, rng);
}

double contrastive_row_loss(double positive_logit, std::span<const double> negative_logits) {
  if (negative_logits.empty()) return 0.0;
  const double m = std::max(positive_logit,
                            *std::max_element(negative_logits.begin(), negative_logits.end()));
  if (m == positive_logit) {
    double s = 0.0;
    for (double l : negative_logits) s += std::exp(l - m);
    return std::log1p(s);
  }
  double s = std::exp(positive_logit - m);
  for (double l : negative_logits) s += std::exp(l - m);
  return (m - positive_logit) + std::log(s);
}

namespace {

struct FeaturizedBatch {
  std::size_t rows = 0;
  std::size_t n_hard = 0;
  std::vector<FeatureVector> texts;  // anchors | positives | hard negatives
  std::vector<std::uint32_t> task_ids;

  std::size_t anchor(std::size_t i) const { return i; }
  std::size_t positive(std::size_t i) const { return rows + i; }
  std::size_t hard(std::size_t i, std::size_t h) const { return 2 * rows + i * n_hard + h; }
};

FeaturizedBatch featurize_batch(const HashSpec& spec, const ContrastiveBatch& batch) {
  FeaturizedBatch fb;
  fb.rows = batch.rows.size();
  fb.n_hard = batch.n_hard;
  fb.texts.resize(fb.rows * (2 + fb.n_hard));
  std::map<std::string, std::uint32_t> task_ids;
  for (std::size_t i = 0; i < fb.rows; ++i) {
    const auto& row = batch.rows[i];
    if (row.hard_negatives.size() != fb.n_hard)
      throw ConfigError("contrastive row has the wrong number of hard negatives");
    fb.texts[fb.anchor(i)] = featurize(spec, row.anchor);
    fb.texts[fb.positive(i)] = featurize(spec, row.positive);
    for (std::size_t h = 0; h < fb.n_hard; ++h)
      fb.texts[fb.hard(i, h)] = featurize(spec, row.hard_negatives[h]);
    const auto [it, inserted] =
        task_ids.emplace(row.task, static_cast<std::uint32_t>(task_ids.size()));
    fb.task_ids.push_back(it->second);
  }
  return fb;
}

template <typename T>
void embed_texts(std::span<const T> wt, std::size_t d, const FeaturizedBatch& fb,
                 std::vector<T>& emb) {
  emb.assign(fb.texts.size() * d, T(0));
  for (std::size_t t = 0; t < fb.texts.size(); ++t) {
    const FeatureVector& fv = fb.texts[t];
    std::span<T> out(emb.data() + t * d, d);
    for (std::size_t k = 0; k < fv.nnz(); ++k)
      simd::axpy(static_cast<T>(fv.values[k]),
                 std::span<const T>(wt.data() + static_cast<std::size_t>(fv.indices[k]) * d, d),
                 out);
  }
}

// Mean row loss; when grad is given, accumulates d(loss)/d(embedding) per text.
template <typename T>
double batch_loss(const std::vector<T>& emb, std::size_t d, const FeaturizedBatch& fb,
                  std::vector<T>* grad) {
  if (fb.rows == 0) return 0.0;
  auto vec = [&](std::size_t t) { return std::span<const T>(emb.data() + t * d, d); };
  const double inv_rows = 1.0 / static_cast<double>(fb.rows);
  double total = 0.0;
  std::vector<std::size_t> cands;
  std::vector<double> logits;
  for (std::size_t i = 0; i < fb.rows; ++i) {
    cands.clear();
    cands.push_back(fb.positive(i));
    for (std::size_t h = 0; h < fb.n_hard; ++h) cands.push_back(fb.hard(i, h));
    for (std::size_t j = 0; j < fb.rows; ++j)
      if (j != i && fb.task_ids[j] != fb.task_ids[i]) cands.push_back(fb.positive(j));
    if (cands.size() == 1) continue;

    const auto a = vec(fb.anchor(i));
    logits.clear();
    for (std::size_t c : cands) logits.push_back(static_cast<double>(simd::dot(a, vec(c))));
    total += contrastive_row_loss(logits[0], std::span<const double>(logits).subspan(1));

    if (!grad) continue;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    std::span<T> ga(grad->data() + fb.anchor(i) * d, d);
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const double p = std::exp(logits[k] - m) / z;
      const T coef = static_cast<T>((p - (k == 0 ? 1.0 : 0.0)) * inv_rows);
      simd::axpy(coef, vec(cands[k]), ga);
      simd::axpy(coef, a, std::span<T>(grad->data() + cands[k] * d, d));
    }
  }
  return total * inv_rows;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

double loss_f64(std::span<const double> wt, std::size_t d, const FeaturizedBatch& fb) {
  std::vector<double> emb;
  embed_texts<double>(wt, d, fb, emb);
  return batch_loss<double>(emb, d, fb, nullptr);
}

// d(loss)/d(W[r, j]) = sum_t x_tj * g_t[r]
double grad_entry(const FeaturizedBatch& fb, const std::vector<double>& g, std::size_t d,
                  std::uint32_t row, std::uint32_t feature) {
  double s = 0.0;
  for (std::size_t t = 0; t < fb.texts.size(); ++t) {
    const auto& fv = fb.texts[t];
    const auto it = std::lower_bound(fv.indices.begin(), fv.indices.end(), feature);
    if (it != fv.indices.end() && *it == feature)
      s += static_cast<double>(fv.values[it - fv.indices.begin()]) * g[t * d + row];
  }
  return s;
}

}  // namespace

double contrastive_loss(const EncoderModel& model, const ContrastiveBatch& batch) {
  const auto fb = featurize_batch(model.hash_spec(), batch);
  std::vector<float> emb;
  embed_texts<float>(model.feature_major(), model.dim(), fb, emb);
  return batch_loss<float>(emb, model.dim(), fb, nullptr);
}

std::vector<double> contrastive_gradient(const EncoderModel& model,
                                         const ContrastiveBatch& batch) {
  const std::size_t d = model.dim();
  const std::size_t f = model.feature_dim();
  const auto fb = featurize_batch(model.hash_spec(), batch);
  const auto wt = to_double(model.feature_major());
  std::vector<double> emb, g(fb.texts.size() * d, 0.0);
  embed_texts<double>(wt, d, fb, emb);
  batch_loss<double>(emb, d, fb, &g);
  std::vector<double> out(d * f, 0.0);
  for (std::size_t t = 0; t < fb.texts.size(); ++t) {
    const auto& fv = fb.texts[t];
    for (std::size_t k = 0; k < fv.nnz(); ++k)
      for (std::size_t r = 0; r < d; ++r)
        out[r * f + fv.indices[k]] += static_cast<double>(fv.values[k]) * g[t * d + r];
  }
  return out;
}

GradCheckResult grad_check_encoder(const EncoderModel& model, const ContrastiveBatch& batch,
                                   double eps, std::size_t n_samples, std::uint64_t seed) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  const std::size_t d = model.dim();
  const auto fb = featurize_batch(model.hash_spec(), batch);
  std::vector<double> wt = to_double(model.feature_major());
  std::vector<double> emb, g(fb.texts.size() * d, 0.0);
  embed_texts<double>(wt, d, fb, emb);
  batch_loss<double>(emb, d, fb, &g);

  std::set<std::uint32_t> active_set;
  for (const auto& fv : fb.texts) active_set.insert(fv.indices.begin(), fv.indices.end());
  const std::vector<std::uint32_t> active(active_set.begin(), active_set.end());

  Rng rng(seed);
  GradCheckResult res;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto row = static_cast<std::uint32_t>(uniform_index(rng, d));
    std::uint32_t feature;
    if (s % 2 == 0 && !active.empty())
      feature = active[uniform_index(rng, active.size())];
    else
      feature = static_cast<std::uint32_t>(uniform_index(rng, model.feature_dim()));

    const double analytic = grad_entry(fb, g, d, row, feature);
    double& w = wt[static_cast<std::size_t>(feature) * d + row];
    const double saved = w;
    w = saved + eps;
    const double up = loss_f64(wt, d, fb);
    w = saved - eps;
    const double down = loss_f64(wt, d, fb);
    w = saved;
    const double numeric = (up - down) / (2.0 * eps);

    // Entries below 1e-6 in magnitude are compared on an absolute scale.
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    res.max_relative_error = std::max(res.max_relative_error, std::abs(analytic - numeric) / denom);
    ++res.n_checked;
  }
  return res;
}

EncoderTrainResult train_encoder(EncoderModel model, const ContrastiveDataset& data,
                                 const EncoderTrainConfig& config,
                                 const std::function<void(std::size_t, double)>& on_step) {
  if (config.batch == 0) throw ConfigError("encoder batch size must be positive");
  const std::size_t d = model.dim();
  const std::size_t steps =
      config.steps > 0 ? config.steps
                       : static_cast<std::size_t>(config.epochs) *
                             ((data.examples().size() + config.batch - 1) / config.batch);
  Rng rng(derive_seed(config.seed, "batches"));
  EncoderTrainResult result;
  result.losses.reserve(steps);
  std::vector<float> emb, grad;
  auto wt = model.feature_major();
  for (std::size_t step = 0; step < steps; ++step) {
    const auto batch = data.sample_batch(config.batch, config.n_hard, rng);
    const auto fb = featurize_batch(model.hash_spec(), batch);
    embed_texts<float>(wt, d, fb, emb);
    grad.assign(emb.size(), 0.0f);
    const double loss = batch_loss<float>(emb, d, fb, &grad);
    if (!std::isfinite(loss))
      throw Error("non-finite contrastive loss at step " + std::to_string(step));
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss);
    if (config.lr == 0.0) continue;
    for (std::size_t t = 0; t < fb.texts.size(); ++t) {
      const auto& fv = fb.texts[t];
      const std::span<const float> gt(grad.data() + t * d, d);
      for (std::size_t k = 0; k < fv.nnz(); ++k)
        simd::axpy(static_cast<float>(-config.lr * fv.values[k]), gt,
                   std::span<float>(wt.data() + static_cast<std::size_t>(fv.indices[k]) * d, d));
    }
  }
  model.train_meta() = {config.lr, config.batch, config.n_hard, config.seed, config.epochs};
  result.model = std::move(model);
  return result;
}

EncoderTrainResult train_encoder(const std::vector<TaskExample>& dataset,
                                 const std::vector<PromptTemplate>& templates,
                                 const EncoderTrainConfig& config,
                                 const std::function<void(std::size_t, double)>& on_step) {
  const ContrastiveDataset data(dataset, templates);
  auto model = EncoderModel::random(config.d, config.hash, config.init_scale,
                                    derive_seed(config.seed, "init"));
  return train_encoder(std::move(model), data, config, on_step);
}

}  // namespace picl::encoder
