#include <doctest.h>

#include <chrono>
#include <cmath>

#include "picl/constructor/constructor.hpp"
#include "picl/lm/ngram.hpp"
#include "picl/rng.hpp"
#include "test_util.hpp"

using namespace picl;
using namespace picl::constructor;
using corpus::Paragraph;
using corpus::ParagraphStore;
using retrieval::RetrievalResult;
using retrieval::Strategy;

namespace {

std::string words(std::size_t n, const std::string& w) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + w + std::to_string(i % 7);
  return s;
}

ParagraphStore make_store(std::vector<std::string> texts) {
  std::vector<Paragraph> ps;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Paragraph p;
    p.id = i;
    p.doc_id = "d" + std::to_string(i);
    p.text = std::move(texts[i]);
    p.token_count = static_cast<std::uint32_t>(corpus::count_tokens(p.text));
    ps.push_back(std::move(p));
  }
  return ParagraphStore(std::move(ps));
}

RetrievalResult neighbors(ParagraphId q, std::vector<ParagraphId> ids) {
  RetrievalResult r{q, std::move(ids), {}, Strategy::dense_exact};
  r.scores.assign(r.neighbor_ids.size(), 0.0f);
  return r;
}

ParagraphStore random_store(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> lex = {"the", "cat", "sat", "on", "a", "mat", "dog", "ran", ".", ","};
  Rng rng(seed);
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const auto len = 1 + uniform_index(rng, 40);
    for (std::uint64_t w = 0; w < len; ++w) {
      if (w) t += uniform_index(rng, 10) == 0 ? "\n" : " ";
      t += lex[uniform_index(rng, lex.size())];
    }
    texts.push_back(t);
  }
  return make_store(texts);
}

std::vector<RetrievalResult> random_results(const ParagraphStore& store, std::size_t k, std::uint64_t seed) {
  retrieval::Resources res;
  res.store = &store;
  res.seed = seed;
  return retrieval::retrieve_all(Strategy::random, k, res);
}

/// Rewards every newline, so a joined text beats its parts.
class NewlineBonusScorer final : public lm::LmScorer {
 public:
  lm::Score logprob(std::string_view text) override {
    const auto n = corpus::count_tokens(text);
    double nl = 0;
    for (char c : text) nl += c == '\n';
    return {-3.0 * double(n) + 4.0 * nl, n};
  }
  std::string describe() const override { return "newline-bonus"; }
};

}  // namespace

TEST_CASE("packing admits most similar neighbours within budget") {
  auto store = make_store({words(400, "q"), words(400, "a"), words(400, "b"), words(400, "c")});
  auto inst = construct_instance(store.at(0), neighbors(0, {1, 2, 3}), store, 1024);
  REQUIRE(inst);
  CHECK(inst->demo_ids == std::vector<ParagraphId>{1});
  CHECK(inst->text == store.at(1).text + "\n" + store.at(0).text);
  CHECK(inst->token_count == 801);

  auto alone = construct_instance(store.at(0), neighbors(0, {}), store, 1024);
  REQUIRE(alone);
  CHECK(alone->demo_ids.empty());
  CHECK(alone->text == store.at(0).text);

  CHECK_FALSE(construct_instance(store.at(0), neighbors(0, {1}), store, 399));
  auto exact = construct_instance(store.at(0), neighbors(0, {1, 2}), store, 801);
  CHECK(exact->demo_ids.size() == 1);
}

TEST_CASE("unbounded budget keeps all twenty demos in reverse similarity order") {
  std::vector<std::string> texts;
  for (int i = 0; i < 21; ++i) texts.push_back("paragraph number " + std::to_string(i));
  auto store = make_store(texts);
  std::vector<ParagraphId> nb;
  for (ParagraphId i = 1; i <= 20; ++i) nb.push_back(i);
  auto inst = construct_instance(store.at(0), neighbors(0, nb), store, SIZE_MAX);
  REQUIRE(inst);
  REQUIRE(inst->demo_ids.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(inst->demo_ids[i] == 20 - i);
  CHECK(inst->text.starts_with("paragraph number 20\n"));
  CHECK(inst->text.ends_with("\nparagraph number 1\nparagraph number 0"));
}

TEST_CASE("duplicate texts are skipped") {
  auto store = make_store({"same text", "same text", "other", "other", "third"});
  auto inst = construct_instance(store.at(0), neighbors(0, {1, 2, 3, 4}), store, 1024);
  CHECK(inst->demo_ids == std::vector<ParagraphId>{4, 2});
}

TEST_CASE("packing invariants on random corpora") {
  auto store = random_store(300, 1);
  for (std::size_t budget : {1u, 20u, 60u, 200u}) {
    for (const auto& r : random_results(store, 20, budget)) {
      auto inst = construct_instance(store.at(r.query_id), r, store, budget);
      if (store.at(r.query_id).token_count > budget) {
        CHECK_FALSE(inst);
        continue;
      }
      REQUIRE(inst);
      CHECK(inst->token_count <= budget);
      CHECK(inst->token_count == corpus::count_tokens(inst->text));
      CHECK(inst->text.ends_with(store.at(r.query_id).text));
      const auto segs = segments_of(*inst, store);
      CHECK(segs.back() == store.at(r.query_id).text);
      // demos are a prefix of the neighbour list, reversed
      for (std::size_t i = 0; i < inst->demo_ids.size(); ++i)
        CHECK(inst->demo_ids[inst->demo_ids.size() - 1 - i] == r.neighbor_ids[i]);
    }
  }
}

TEST_CASE("informativeness identities") {
  auto store = random_store(1000, 2);
  std::vector<std::string> texts;
  for (const auto& p : store.paragraphs()) texts.push_back(p.text);
  lm::UnigramScorer uni(corpus::Tokenizer::build(texts), texts);
  auto ngram = lm::NGramLm::train(corpus::Tokenizer::build(texts), texts, 3, {0.2, 0.3, 0.5});

  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (const auto& r : random_results(store, 5, 3)) {
    auto inst = construct_instance(store.at(r.query_id), r, store, 1024);
    worst = std::max(worst, std::abs(informativeness_score(*inst, store, uni)));
    auto single = construct_instance(store.at(r.query_id), neighbors(r.query_id, {}), store, 1024);
    CHECK(informativeness_score(*single, store, ngram) == 0.0);
  }
  CHECK(worst < 1e-9);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(10));

  NewlineBonusScorer bonus;
  const std::vector<std::string> segs = {"a b", "c d e"};
  // joined: -3*6 + 4 = -14 against parts -6 - 9
  CHECK(std::abs(informativeness_score(segs, bonus) - 1.0 / 6.0) < 1e-12);
  CHECK_THROWS_AS(informativeness_score(std::span<const std::string>{}, bonus), ConfigError);
}

TEST_CASE("filtering is strict") {
  std::vector<PretrainInstance> v(3);
  const double scores[] = {-0.1, 0.05, 0.2};
  for (int i = 0; i < 3; ++i) {
    v[i].query_id = 10 + i;
    v[i].score = scores[i];
  }
  auto r = filter_instances(v, 0.0);
  CHECK(r.n_candidates == 3);
  REQUIRE(r.retained.size() == 2);
  CHECK(r.retained[0].id == 0);
  CHECK(r.retained[0].query_id == 11);
  CHECK(r.retained[1].id == 1);

  v[0].score = 0.0;
  CHECK(filter_instances(v, 0.0).retained.size() == 2);
  CHECK(filter_instances(v, kNoFilter).retained.size() == 3);
  v[1].score.reset();
  CHECK_THROWS_AS(filter_instances(v, 0.0), ConfigError);
}

TEST_CASE("delta parsing") {
  CHECK(parse_delta("-inf") == kNoFilter);
  CHECK(parse_delta("0.1") == 0.1);
  CHECK(parse_delta("-0.1") == -0.1);
  CHECK(format_delta(kNoFilter) == "-inf");
  CHECK(parse_delta(format_delta(0.25)) == 0.25);
  CHECK_THROWS_AS(parse_delta("zero"), ConfigError);
  CHECK_THROWS_AS(parse_delta("0.1x"), ConfigError);
  CHECK_THROWS_AS(parse_delta("nan"), ConfigError);
}

TEST_CASE("building a corpus") {
  auto store = random_store(100, 4);
  const auto results = random_results(store, 20, 5);
  auto out = build_pretrain_corpus(store, results, 20, 1024, kNoFilter, nullptr);
  CHECK(out.instances.size() == 100);
  CHECK(out.manifest.n_candidates == 100);
  CHECK(out.manifest.retained_fraction == 1.0);
  for (std::size_t i = 0; i < out.instances.size(); ++i) {
    CHECK(out.instances[i].id == i);
    CHECK(out.instances[i].query_id == i);
  }
  CHECK_THROWS_AS(build_pretrain_corpus(store, results, 20, 1024, 0.0, nullptr), ConfigError);

  std::vector<std::string> texts;
  for (const auto& p : store.paragraphs()) texts.push_back(p.text);
  const auto tok = corpus::Tokenizer::build(texts);
  const auto ref = lm::NGramLm::train(tok, texts, 3, {0.2, 0.3, 0.5});
  ScorerFactory factory = [&] { return std::make_unique<lm::NGramLm>(ref); };
  auto filtered = build_pretrain_corpus(store, results, 20, 1024, 0.0, factory, 1);
  CHECK(filtered.manifest.retained_fraction < 1.0);
  CHECK(filtered.manifest.n_retained == filtered.instances.size());
  for (const auto& i : filtered.instances) CHECK(*i.score > 0.0);

  auto threaded = build_pretrain_corpus(store, results, 20, 1024, 0.0, factory, 4);
  CHECK(threaded.instances == filtered.instances);

  picl::testing::TempDir dir;
  save_instances_jsonl(dir / "a.jsonl", filtered.instances);
  save_instances_jsonl(dir / "b.jsonl", threaded.instances);
  CHECK(io::sha256_file(dir / "a.jsonl") == io::sha256_file(dir / "b.jsonl"));
  CHECK(load_instances_jsonl(dir / "a.jsonl") == filtered.instances);

  const auto mj = filtered.manifest.to_json();
  CHECK(mj["delta"] == 0.0);
  CHECK(BuildManifest::from_json(out.manifest.to_json()).delta == kNoFilter);
  CHECK(BuildManifest::from_json(mj).n_retained == filtered.manifest.n_retained);
}

TEST_CASE("query ids outside the store are reported") {
  auto store = random_store(10, 6);
  std::vector<RetrievalResult> bad = {neighbors(3, {42})};
  CHECK_THROWS_WITH_AS(construct_candidates(store, bad, 1024, nullptr), doctest::Contains("query 3"), FormatError);
}
