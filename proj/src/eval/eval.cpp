#include "picl/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "picl/corpus/tokenizer.hpp"
#include "picl/io.hpp"
#include "picl/parallel.hpp"
#include "picl/rng.hpp"

namespace picl::eval {

std::string_view to_string(TaskKind k) {
  return k == TaskKind::classification ? "classification" : "generation";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "generation") return TaskKind::generation;
  throw ConfigError("unknown task kind: " + std::string(s));
}

void EvalTask::validate() const {
  if (name.empty()) throw ConfigError("task without a name");
  if (train.empty() && eval.empty()) throw ConfigError("task " + name + " has no examples");
  if (kind != TaskKind::classification) return;
  if (labels.size() < 2) throw ConfigError("task " + name + " needs at least 2 labels");
  auto check = [&](const std::vector<TaskExample>& v) {
    for (const auto& e : v)
      if (std::find(labels.begin(), labels.end(), e.output) == labels.end())
        throw ConfigError("task " + name + ": output \"" + e.output + "\" is not a label");
  };
  check(train);
  check(eval);
}

namespace {

std::vector<TaskExample> examples_from(const nlohmann::json& arr, const std::string& task) {
  std::vector<TaskExample> out;
  for (const auto& e : arr) out.push_back({task, e.at("input"), e.at("output")});
  return out;
}

nlohmann::json examples_to(const std::vector<TaskExample>& v) {
  auto arr = nlohmann::json::array();
  for (const auto& e : v) arr.push_back({{"input", e.input}, {"output", e.output}});
  return arr;
}

std::string_view rtrim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

EvalTask load_task(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  EvalTask t;
  try {
    t.name = j.at("name");
    t.kind = parse_task_kind(j.at("kind").get<std::string>());
    t.prompt = PromptTemplate(t.name, j.at("template"));
    if (j.contains("labels")) t.labels = j["labels"].get<std::vector<std::string>>();
    t.train = examples_from(j.at("train"), t.name);
    t.eval = examples_from(j.at("eval"), t.name);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  t.validate();
  return t;
}

void save_task(const std::filesystem::path& path, const EvalTask& task) {
  nlohmann::json j = {{"name", task.name},
                      {"kind", to_string(task.kind)},
                      {"template", task.prompt.pattern()},
                      {"train", examples_to(task.train)},
                      {"eval", examples_to(task.eval)}};
  if (task.kind == TaskKind::classification) j["labels"] = task.labels;
  io::write_json(path, j);
}

std::string render_context(const EvalTask& task, std::span<const TaskExample> demos,
                           const TaskExample& query) {
  std::string out;
  for (const auto& d : demos) {
    if (d.input == query.input && d.output == query.output)
      throw ConfigError("query appears among the demonstrations of task " + task.name);
    out += task.prompt.render(d.input, d.output);
    out += '\n';
  }
  out += rtrim(task.prompt.render_prefix(query.input));
  return out;
}

std::string label_continuation(const EvalTask& task, const TaskExample& query,
                               std::string_view label) {
  const std::string prefix = task.prompt.render_prefix(query.input);
  return prefix.substr(rtrim(prefix).size()) + std::string(label);
}

std::size_t ranking_classify(lm::LmScorer& scorer, std::string_view context,
                             std::span<const std::string> continuations) {
  if (continuations.size() < 2) throw ConfigError("ranking needs at least 2 labels");
  std::vector<std::string> texts;
  texts.reserve(continuations.size() + 1);
  texts.emplace_back(context);
  for (const auto& c : continuations) texts.push_back(std::string(context) + c);
  const auto s = scorer.logprob_batch(texts);
  std::size_t best = 0;
  double best_nll = 0.0;
  for (std::size_t i = 0; i < continuations.size(); ++i) {
    const auto& full = s[i + 1];
    if (full.num_tokens <= s[0].num_tokens)
      throw ConfigError("label continuation \"" + continuations[i] + "\" has no tokens");
    const double nll = -(full.logprob - s[0].logprob) / double(full.num_tokens - s[0].num_tokens);
    if (i == 0 || nll < best_nll) {
      best = i;
      best_nll = nll;
    }
  }
  return best;
}

nlohmann::json EvalReport::to_json() const {
  return {{"task", task}, {"metric", metric}, {"seeds", seeds},
          {"values", values}, {"mean", mean}, {"std", std}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.task = j.at("task");
    r.metric = j.at("metric");
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.values = j.at("values").get<std::vector<double>>();
    r.mean = j.at("mean");
    r.std = j.at("std");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

void aggregate(EvalReport& r) {
  const double n = double(r.values.size());
  if (r.values.empty()) {
    r.mean = r.std = 0.0;
    return;
  }
  double s = 0;
  for (double v : r.values) s += v;
  r.mean = s / n;
  double ss = 0;
  for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / n);
}

std::vector<TaskExample> sample_demos(const EvalTask& task, std::size_t n_shots, std::uint64_t seed) {
  if (n_shots > task.train.size())
    throw ConfigError("task " + task.name + " has " + std::to_string(task.train.size()) +
                      " training examples, fewer than " + std::to_string(n_shots) + " shots");
  Rng rng(derive_seed(seed, task.name));
  std::vector<std::size_t> idx(task.train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<TaskExample> out;
  for (std::size_t i = 0; i < n_shots; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    out.push_back(task.train[idx[i]]);
  }
  return out;
}

namespace {

struct Job {
  std::size_t seed_index;
  std::size_t example;
};

template <typename PerWorker>
EvalReport run_seeds(const EvalTask& task, const ShotConfig& shots, std::string metric,
                     unsigned threads, PerWorker make_worker) {
  if (shots.seeds.empty()) throw ConfigError("at least one seed is required");
  const std::size_t n_eval = std::min(task.eval.size(), shots.max_eval_examples);
  if (n_eval == 0) throw ConfigError("task " + task.name + " has no evaluation examples");
  std::vector<std::vector<TaskExample>> demos;
  for (auto seed : shots.seeds) demos.push_back(sample_demos(task, shots.n_shots, seed));

  std::vector<Job> jobs;
  for (std::size_t s = 0; s < shots.seeds.size(); ++s)
    for (std::size_t e = 0; e < n_eval; ++e) jobs.push_back({s, e});
  std::vector<double> values(jobs.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, jobs.size()));
  const std::size_t chunk = (jobs.size() + workers - 1) / workers;
  parallel_for(workers, threads, [&](std::size_t w) {
    auto fn = make_worker();
    for (std::size_t j = w * chunk; j < std::min(jobs.size(), (w + 1) * chunk); ++j)
      values[j] = fn(demos[jobs[j].seed_index], task.eval[jobs[j].example]);
  });

  EvalReport r{task.name, std::move(metric), shots.seeds, {}, 0.0, 0.0};
  for (std::size_t s = 0; s < shots.seeds.size(); ++s) {
    double sum = 0;
    for (std::size_t e = 0; e < n_eval; ++e) sum += values[s * n_eval + e];
    r.values.push_back(sum / double(n_eval));
  }
  aggregate(r);
  return r;
}

}  // namespace

EvalReport few_shot_eval(const EvalTask& task, const lm::ScorerFactory& scorer,
                         const ShotConfig& shots, unsigned threads) {
  task.validate();
  if (task.kind != TaskKind::classification)
    throw ConfigError("task " + task.name + " is not a classification task");
  return run_seeds(task, shots, "accuracy", threads, [&] {
    std::shared_ptr<lm::LmScorer> s = scorer();
    return [&task, s](const std::vector<TaskExample>& demos, const TaskExample& q) {
      std::vector<std::string> conts;
      for (const auto& l : task.labels) conts.push_back(label_continuation(task, q, l));
      const auto pick = ranking_classify(*s, render_context(task, demos, q), conts);
      return task.labels[pick] == q.output ? 1.0 : 0.0;
    };
  });
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  auto split = [](std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in(corpus::ascii_lower(s));
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  const auto c = split(candidate), r = split(reference);
  if (c.empty() || r.empty()) return 0.0;
  std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j)
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = double(prev[r.size()]);
  if (lcs == 0) return 0.0;
  const double p = lcs / double(c.size()), rec = lcs / double(r.size());
  return 2 * p * rec / (p + rec);
}

EvalReport generation_eval(const EvalTask& task, const lm::GenerativeLm& model,
                           const ShotConfig& shots, unsigned threads) {
  task.validate();
  return run_seeds(task, shots, "rouge_l", threads, [&] {
    return [&](const std::vector<TaskExample>& demos, const TaskExample& q) {
      const auto out = lm::greedy_decode(model, render_context(task, demos, q), shots.max_new_tokens,
                                         corpus::Tokenizer::kNewline);
      return rouge_l(out, q.output);
    };
  });
}

Comparison compare_datasets(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& sets, lm::LmScorer& scorer) {
  Comparison c;
  for (const auto& [name, texts] : sets) {
    if (texts.empty()) throw ConfigError("dataset " + name + " is empty");
    const auto scores = scorer.logprob_batch(texts);
    double sum = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].num_tokens == 0)
        throw ConfigError("dataset " + name + " has a text without tokens at index " + std::to_string(i));
      sum += std::exp(-scores[i].logprob / double(scores[i].num_tokens));
    }
    c.rows.push_back({name, texts.size(), sum / double(texts.size())});
  }
  return c;
}

std::string Comparison::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "set,n,mean_perplexity\n";
  for (const auto& r : rows) out << r.name << ',' << r.n << ',' << r.mean_perplexity << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      out << rows[i].name << '-' << rows[j].name << ",," << rows[i].mean_perplexity - rows[j].mean_perplexity
          << '\n';
  return out.str();
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out.precision(17);
  out << "task,seed,metric,value\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.values.size(); ++i)
      out << r.task << ',' << r.seeds[i] << ',' << r.metric << ',' << r.values[i] << '\n';
  return out.str();
}

}  // namespace picl::eval
