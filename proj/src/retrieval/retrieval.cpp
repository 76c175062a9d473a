#include "picl/retrieval/retrieval.hpp"

#include <unordered_set>

#include "picl/io.hpp"
#include "picl/parallel.hpp"
#include "picl/rng.hpp"
#include "picl/topk.hpp"

namespace picl::retrieval {

namespace {

RetrievalResult from_search(const corpus::Paragraph& q, Strategy s, const vecindex::SearchResult& r) {
  return {q.id, r.ids, r.scores, s};
}

RetrievalResult random_neighbors(const corpus::Paragraph& q, std::size_t k, const Resources& res) {
  const std::size_t n = res.store->size();
  RetrievalResult out{q.id, {}, {}, Strategy::random};
  Rng rng(derive_seed(res.seed, q.id));
  const std::size_t others = n - (q.id < n ? 1 : 0);
  if (k >= others) {
    for (ParagraphId id = 0; id < n; ++id)
      if (id != q.id) out.neighbor_ids.push_back(id);
    for (std::size_t i = out.neighbor_ids.size(); i > 1; --i)
      std::swap(out.neighbor_ids[i - 1], out.neighbor_ids[uniform_index(rng, i)]);
  } else {
    std::unordered_set<ParagraphId> taken;
    while (out.neighbor_ids.size() < k) {
      const ParagraphId id = uniform_index(rng, n);
      if (id == q.id || !taken.insert(id).second) continue;
      out.neighbor_ids.push_back(id);
    }
  }
  out.scores.assign(out.neighbor_ids.size(), 0.0f);
  return out;
}

void require(bool ok, Strategy s, std::string_view what) {
  if (!ok)
    throw ConfigError("strategy " + std::string(to_string(s)) + " needs " + std::string(what));
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::dense_exact: return "dense_exact";
    case Strategy::dense_ivf: return "dense_ivf";
    case Strategy::bm25: return "bm25";
    case Strategy::random: return "random";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::dense_exact, Strategy::dense_ivf, Strategy::bm25, Strategy::random})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown retrieval strategy '" + std::string(s) +
                    "' (expected dense_exact, dense_ivf, bm25 or random)");
}

RetrievalResult retrieve(Strategy strategy, const corpus::Paragraph& query, std::size_t k,
                         const Resources& res) {
  if (k == 0) throw ConfigError("k must be >= 1");
  const ParagraphId self[] = {query.id};
  switch (strategy) {
    case Strategy::dense_exact: {
      require(res.encoder && res.exact, strategy, "an encoder and an exact index");
      const auto e = res.encoder->embed(query.text);
      return from_search(query, strategy, vecindex::search_exact(*res.exact, e, k, self));
    }
    case Strategy::dense_ivf: {
      require(res.encoder && res.ivf, strategy, "an encoder and an IVF index");
      const auto e = res.encoder->embed(query.text);
      return from_search(query, strategy, vecindex::search_ivf(*res.ivf, e, k, res.n_probe, self));
    }
    case Strategy::bm25: {
      require(res.bm25 != nullptr, strategy, "a BM25 index");
      const auto scores = res.bm25->score_all(Bm25Index::terms_of(query.text));
      TopK<double> top(k);
      for (ParagraphId id = 0; id < scores.size(); ++id)
        if (id != query.id) top.push(scores[id], id);
      RetrievalResult out{query.id, {}, {}, strategy};
      for (const auto& [s, id] : top.take()) {
        out.neighbor_ids.push_back(id);
        out.scores.push_back(static_cast<float>(s));
      }
      return out;
    }
    case Strategy::random:
      require(res.store != nullptr, strategy, "a paragraph store");
      return random_neighbors(query, k, res);
  }
  throw ConfigError("unknown strategy");
}

std::vector<RetrievalResult> retrieve_all(Strategy strategy, std::size_t k, const Resources& res,
                                          unsigned threads) {
  if (!res.store) throw ConfigError("retrieve_all needs a paragraph store");
  const auto& ps = res.store->paragraphs();
  std::vector<RetrievalResult> out(ps.size());
  parallel_for(ps.size(), threads, [&](std::size_t i) { out[i] = retrieve(strategy, ps[i], k, res); });
  return out;
}

void save_retrieval_jsonl(const std::filesystem::path& path,
                          const std::vector<RetrievalResult>& results) {
  std::string text;
  for (const auto& r : results) {
    nlohmann::json j = {{"query_id", r.query_id},
                        {"strategy", to_string(r.strategy)},
                        {"neighbors", r.neighbor_ids},
                        {"scores", r.scores}};
    text += j.dump() + "\n";
  }
  io::write_text(path, text);
}

std::vector<RetrievalResult> load_retrieval_jsonl(const std::filesystem::path& path) {
  std::vector<RetrievalResult> out;
  io::for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& j) {
    try {
      RetrievalResult r;
      r.query_id = j.at("query_id").get<ParagraphId>();
      r.strategy = parse_strategy(j.at("strategy").get<std::string>());
      r.neighbor_ids = j.at("neighbors").get<std::vector<ParagraphId>>();
      r.scores = j.at("scores").get<std::vector<float>>();
      if (r.scores.size() != r.neighbor_ids.size()) throw FormatError("scores and neighbors differ in length");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

std::vector<std::optional<std::string>> paragraph_tasks(
    const corpus::ParagraphStore& store, const std::map<std::string, std::string>& doc_tasks) {
  std::vector<std::optional<std::string>> out(store.size());
  for (const auto& p : store.paragraphs()) {
    const auto it = doc_tasks.find(p.doc_id);
    if (it != doc_tasks.end()) out[p.id] = it->second;
  }
  return out;
}

PurityStats task_purity(const std::vector<RetrievalResult>& results,
                        const std::vector<std::optional<std::string>>& tasks) {
  PurityStats st;
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.query_id >= tasks.size() || !tasks[r.query_id] || r.neighbor_ids.empty()) continue;
    std::size_t same = 0;
    for (auto id : r.neighbor_ids)
      if (id < tasks.size() && tasks[id] == tasks[r.query_id]) ++same;
    sum += double(same) / double(r.neighbor_ids.size());
    st.n_neighbors += r.neighbor_ids.size();
    ++st.n_queries;
  }
  st.mean = st.n_queries ? sum / double(st.n_queries) : 0.0;
  return st;
}

}  // namespace picl::retrieval
