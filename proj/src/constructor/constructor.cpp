#include "picl/constructor/constructor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "picl/io.hpp"
#include "picl/parallel.hpp"

namespace picl::constructor {

using corpus::count_tokens;

std::optional<PretrainInstance> construct_instance(const corpus::Paragraph& z0,
                                                   const retrieval::RetrievalResult& neighbors,
                                                   const corpus::ParagraphStore& store,
                                                   std::size_t budget) {
  std::size_t total = count_tokens(z0.text);
  if (total > budget) return std::nullopt;

  std::vector<ParagraphId> admitted;
  std::unordered_set<std::string_view> seen{z0.text};
  for (ParagraphId id : neighbors.neighbor_ids) {
    if (id == z0.id) continue;
    const auto& p = store.at(id);
    if (seen.contains(p.text)) continue;
    const std::size_t cost = count_tokens(p.text) + 1;  // newline join
    if (total + cost > budget) break;
    total += cost;
    admitted.push_back(id);
    seen.insert(p.text);
  }

  PretrainInstance inst;
  inst.query_id = z0.id;
  inst.demo_ids.assign(admitted.rbegin(), admitted.rend());
  for (ParagraphId id : inst.demo_ids) {
    inst.text += store.at(id).text;
    inst.text += '\n';
  }
  inst.text += z0.text;
  inst.token_count = static_cast<std::uint32_t>(count_tokens(inst.text));
  if (inst.token_count != total) throw Error("token accounting mismatch for query " + std::to_string(z0.id));
  return inst;
}

std::vector<std::string> segments_of(const PretrainInstance& inst,
                                     const corpus::ParagraphStore& store) {
  std::vector<std::string> out;
  out.reserve(inst.demo_ids.size() + 1);
  for (ParagraphId id : inst.demo_ids) out.push_back(store.at(id).text);
  out.push_back(store.at(inst.query_id).text);
  return out;
}

double informativeness_score(std::span<const std::string> segments, lm::LmScorer& scorer) {
  if (segments.empty()) throw ConfigError("instance has no segments");
  std::vector<std::string> texts(segments.begin(), segments.end());
  std::string joined;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) joined += '\n';
    joined += segments[i];
  }
  const std::size_t n = count_tokens(joined);
  if (n == 0) throw ConfigError("instance has no tokens");
  if (segments.size() == 1) return 0.0;
  texts.push_back(std::move(joined));
  const auto scores = scorer.logprob_batch(texts);
  double parts = 0.0;
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) parts += scores[i].logprob;
  return (scores.back().logprob - parts) / static_cast<double>(n);
}

double informativeness_score(const PretrainInstance& inst, const corpus::ParagraphStore& store,
                             lm::LmScorer& scorer) {
  try {
    return informativeness_score(segments_of(inst, store), scorer);
  } catch (const ProtocolError& e) {
    throw ProtocolError("scoring instance for query " + std::to_string(inst.query_id) + ": " + e.what(),
                        e.raw_line());
  } catch (const Error& e) {
    throw Error("scoring instance for query " + std::to_string(inst.query_id) + ": " + e.what());
  }
}

FilterResult filter_instances(std::vector<PretrainInstance> instances, double delta) {
  FilterResult r;
  r.n_candidates = instances.size();
  for (auto& inst : instances) {
    if (!inst.score) throw ConfigError("instance for query " + std::to_string(inst.query_id) + " has no score");
    if (*inst.score > delta) {
      inst.id = r.retained.size();
      r.retained.push_back(std::move(inst));
    }
  }
  return r;
}

namespace {
nlohmann::json delta_json(double d) {
  if (std::isinf(d)) return format_delta(d);
  return d;
}
}  // namespace

nlohmann::json BuildManifest::to_json() const {
  return {{"n_queries", n_queries},
          {"n_over_budget", n_over_budget},
          {"n_candidates", n_candidates},
          {"n_retained", n_retained},
          {"retained_fraction", retained_fraction},
          {"mean_demos_per_instance", mean_demos_per_instance},
          {"mean_instance_tokens", mean_instance_tokens},
          {"strategy", strategy},
          {"k", k},
          {"budget", budget},
          {"delta", delta_json(delta)}};
}

BuildManifest BuildManifest::from_json(const nlohmann::json& j) {
  try {
    BuildManifest m;
    m.n_queries = j.at("n_queries");
    m.n_over_budget = j.at("n_over_budget");
    m.n_candidates = j.at("n_candidates");
    m.n_retained = j.at("n_retained");
    m.retained_fraction = j.at("retained_fraction");
    m.mean_demos_per_instance = j.at("mean_demos_per_instance");
    m.mean_instance_tokens = j.at("mean_instance_tokens");
    m.strategy = j.at("strategy");
    m.k = j.at("k");
    m.budget = j.at("budget");
    const auto& d = j.at("delta");
    m.delta = d.is_string() ? parse_delta(d.get<std::string>()) : d.get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("build manifest: ") + e.what());
  }
}

void summarize(BuildManifest& m, std::span<const PretrainInstance> retained) {
  m.n_retained = retained.size();
  m.retained_fraction = m.n_candidates ? double(m.n_retained) / double(m.n_candidates) : 0.0;
  double demos = 0, tokens = 0;
  for (const auto& i : retained) {
    demos += double(i.demo_ids.size());
    tokens += double(i.token_count);
  }
  m.mean_demos_per_instance = retained.empty() ? 0.0 : demos / double(retained.size());
  m.mean_instance_tokens = retained.empty() ? 0.0 : tokens / double(retained.size());
}

std::vector<PretrainInstance> construct_candidates(
    const corpus::ParagraphStore& store, const std::vector<retrieval::RetrievalResult>& results,
    std::size_t budget, const ScorerFactory& scorer, unsigned threads, std::size_t* n_over_budget) {
  std::vector<std::size_t> order(results.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return results[a].query_id < results[b].query_id; });

  std::vector<std::optional<PretrainInstance>> slots(results.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, results.size()));
  const std::size_t chunk = results.empty() ? 0 : (results.size() + workers - 1) / workers;
  parallel_for(workers, threads, [&](std::size_t w) {
    std::unique_ptr<lm::LmScorer> s = scorer ? scorer() : nullptr;
    const std::size_t lo = w * chunk, hi = std::min(results.size(), lo + chunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& r = results[order[i]];
      try {
        slots[i] = construct_instance(store.at(r.query_id), r, store, budget);
      } catch (const Error& e) {
        throw FormatError("retrieval result for query " + std::to_string(r.query_id) + ": " + e.what());
      }
      if (slots[i] && s) slots[i]->score = informativeness_score(*slots[i], store, *s);
    }
  });

  std::vector<PretrainInstance> out;
  std::size_t over = 0;
  for (auto& s : slots) {
    if (!s) {
      ++over;
      continue;
    }
    s->id = out.size();
    out.push_back(std::move(*s));
  }
  if (n_over_budget) *n_over_budget = over;
  return out;
}

BuildOutput build_pretrain_corpus(const corpus::ParagraphStore& store,
                                  const std::vector<retrieval::RetrievalResult>& results,
                                  std::size_t k, std::size_t budget, double delta,
                                  const ScorerFactory& scorer, unsigned threads) {
  BuildOutput out;
  auto& m = out.manifest;
  m.n_queries = results.size();
  m.k = k;
  m.budget = budget;
  m.delta = delta;
  m.strategy = results.empty() ? "" : std::string(retrieval::to_string(results.front().strategy));
  if (delta != kNoFilter && !scorer) throw ConfigError("filtering with a finite delta needs a scorer");
  auto cands = construct_candidates(store, results, budget, scorer, threads, &m.n_over_budget);
  m.n_candidates = cands.size();
  out.instances = scorer ? filter_instances(std::move(cands), delta).retained : std::move(cands);
  summarize(m, out.instances);
  return out;
}

void save_instances_jsonl(const std::filesystem::path& path,
                          std::span<const PretrainInstance> instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& i : instances) {
    nlohmann::json j = {{"id", i.id},
                        {"query_id", i.query_id},
                        {"demo_ids", i.demo_ids},
                        {"text", i.text},
                        {"token_count", i.token_count}};
    j["score"] = i.score ? nlohmann::json(*i.score) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<PretrainInstance> load_instances_jsonl(const std::filesystem::path& path) {
  std::vector<PretrainInstance> out;
  io::for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& j) {
    try {
      PretrainInstance i;
      i.id = j.at("id");
      i.query_id = j.at("query_id");
      i.demo_ids = j.at("demo_ids").get<std::vector<ParagraphId>>();
      i.text = j.at("text");
      i.token_count = j.at("token_count");
      if (j.contains("score") && !j["score"].is_null()) i.score = j["score"].get<double>();
      out.push_back(std::move(i));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

double parse_delta(std::string_view s) {
  if (s == "-inf" || s == "-Inf" || s == "-INF") return kNoFilter;
  if (s == "inf" || s == "+inf") return -kNoFilter;
  std::string str(s);
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(str, &pos);
  } catch (const std::exception&) {
    throw ConfigError("invalid delta: " + str);
  }
  if (pos != str.size() || std::isnan(v)) throw ConfigError("invalid delta: " + str);
  return v;
}

std::string format_delta(double delta) {
  if (std::isinf(delta)) return delta < 0 ? "-inf" : "inf";
  nlohmann::json j = delta;
  return j.dump();
}

}  // namespace picl::constructor
