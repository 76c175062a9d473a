#include <doctest.h>

#include <cmath>
#include <map>

#include "picl/eval/eval.hpp"
#include "picl/lm/ngram.hpp"
#include "picl/rng.hpp"
#include "test_util.hpp"

using namespace picl;
using namespace picl::eval;

namespace {

EvalTask sentiment(std::size_t n_train, std::size_t n_eval) {
  EvalTask t;
  t.name = "sst";
  t.prompt = PromptTemplate("sst", "Sentence: {input} Label: {output}");
  t.labels = {"Positive", "Negative"};
  for (std::size_t i = 0; i < n_train + n_eval; ++i) {
    TaskExample e{"sst", "w" + std::to_string(i), i % 2 ? "Negative" : "Positive"};
    (i < n_train ? t.train : t.eval).push_back(e);
  }
  return t;
}

/// Per-token log-probability fixed by the final word of the text.
class TableScorer final : public lm::LmScorer {
 public:
  explicit TableScorer(std::map<std::string, double> table) : table_(std::move(table)) {}
  lm::Score logprob(std::string_view text) override {
    const auto toks = corpus::split_tokens(text);
    double lp = 0;
    if (!toks.empty()) {
      auto it = table_.find(std::string(toks.back()));
      if (it != table_.end()) lp = it->second;
    }
    return {lp, toks.size()};
  }
  std::string describe() const override { return "table"; }

 private:
  std::map<std::string, double> table_;
};

/// Pseudo-random but deterministic log-probabilities.
class HashScorer final : public lm::LmScorer {
 public:
  lm::Score logprob(std::string_view text) override {
    const auto n = corpus::count_tokens(text);
    return {-double(fnv1a64(text) % 1000) / 100.0 - double(n), n};
  }
  std::string describe() const override { return "hash"; }
};

std::size_t lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;)
    for (std::size_t j = b.size(); j-- > 0;)
      t[i][j] = a[i] == b[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
  return t[0][0];
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& w : v) s += (s.empty() ? "" : " ") + w;
  return s;
}

}  // namespace

TEST_CASE("context rendering") {
  auto t = sentiment(4, 2);
  const TaskExample q{"sst", "q", "Positive"};
  CHECK(render_context(t, {}, q) == "Sentence: q Label:");
  const std::vector<TaskExample> demos = {{"sst", "s1", "l1"}, {"sst", "s2", "l2"}};
  CHECK(render_context(t, demos, q) == "Sentence: s1 Label: l1\nSentence: s2 Label: l2\nSentence: q Label:");
  CHECK(label_continuation(t, q, "Negative") == " Negative");
  const std::vector<TaskExample> leak = {q};
  CHECK_THROWS_AS(render_context(t, leak, q), ConfigError);
}

TEST_CASE("ranking picks the lowest per-token perplexity") {
  TableScorer s({{"Positive", -1.0}, {"Negative", -5.0}});
  const std::vector<std::string> conts = {" Negative", " Positive"};
  CHECK(ranking_classify(s, "Sentence: x Label:", conts) == 1);
  TableScorer flat({});
  CHECK(ranking_classify(flat, "ctx", conts) == 0);
  const std::vector<std::string> one = {" Positive"};
  CHECK_THROWS_AS(ranking_classify(s, "ctx", one), ConfigError);
}

TEST_CASE("ranking is invariant to a monotone transform of the scores") {
  // scaling every log-probability by a positive constant preserves the argmin
  class Scaled final : public lm::LmScorer {
   public:
    explicit Scaled(double f) : f_(f) {}
    lm::Score logprob(std::string_view text) override {
      auto s = inner_.logprob(text);
      s.logprob *= f_;
      return s;
    }
    std::string describe() const override { return "scaled"; }
    double f_;
    HashScorer inner_;
  };
  Scaled a(1.0), b(3.5);
  const std::vector<std::string> conts = {" x", " y", " z"};
  for (int i = 0; i < 100; ++i) {
    const auto ctx = "context " + std::to_string(i);
    CHECK(ranking_classify(a, ctx, conts) == ranking_classify(b, ctx, conts));
  }
}

TEST_CASE("few-shot evaluation") {
  auto t = sentiment(50, 1000);
  // an oracle that knows every answer
  class Oracle final : public lm::LmScorer {
   public:
    explicit Oracle(const EvalTask& t) {
      for (const auto& e : t.eval) truth_["Sentence: " + e.input + " Label: " + e.output] = true;
    }
    lm::Score logprob(std::string_view text) override {
      const auto n = corpus::count_tokens(text);
      const auto last = text.substr(text.rfind('\n') == std::string_view::npos ? 0 : text.rfind('\n') + 1);
      return {truth_.contains(std::string(last)) ? 0.0 : -double(n), n};
    }
    std::string describe() const override { return "oracle"; }
    std::map<std::string, bool> truth_;
  };
  ShotConfig shots;
  auto r = few_shot_eval(t, [&] { return std::make_unique<Oracle>(t); }, shots, 4);
  CHECK(r.values == std::vector<double>(5, 1.0));
  CHECK(r.mean == 1.0);
  CHECK(r.std == 0.0);

  auto hashed = few_shot_eval(t, [] { return std::make_unique<HashScorer>(); }, shots, 3);
  const double sigma = std::sqrt(0.25 / 1000);
  for (double v : hashed.values) CHECK(std::abs(v - 0.5) < 3 * sigma);
  double m = 0;
  for (double v : hashed.values) m += v;
  m /= 5;
  double ss = 0;
  for (double v : hashed.values) ss += (v - m) * (v - m);
  CHECK(std::abs(hashed.mean - m) < 1e-9);
  CHECK(std::abs(hashed.std - std::sqrt(ss / 5)) < 1e-9);

  ShotConfig one;
  one.seeds = {7};
  auto r1 = few_shot_eval(t, [] { return std::make_unique<HashScorer>(); }, one, 1);
  auto r2 = few_shot_eval(t, [] { return std::make_unique<HashScorer>(); }, one, 8);
  CHECK(r1.values == r2.values);
  CHECK(EvalReport::from_json(r1.to_json()).values == r1.values);

  one.n_shots = 51;
  CHECK_THROWS_AS(few_shot_eval(t, [] { return std::make_unique<HashScorer>(); }, one), ConfigError);
}

TEST_CASE("demonstration samples depend on seed and task name only") {
  auto t = sentiment(30, 1);
  CHECK(sample_demos(t, 4, 3) == sample_demos(t, 4, 3));
  CHECK(sample_demos(t, 4, 3) != sample_demos(t, 4, 4));
  auto renamed = t;
  renamed.name = "other";
  CHECK(sample_demos(t, 4, 3) != sample_demos(renamed, 4, 3));
  auto d = sample_demos(t, 30, 1);
  std::sort(d.begin(), d.end(), [](auto& a, auto& b) { return a.input < b.input; });
  CHECK(std::unique(d.begin(), d.end()) == d.end());
}

TEST_CASE("memorizing scorer classifies its training queries") {
  auto t = sentiment(0, 40);
  std::vector<std::string> lines;
  for (const auto& e : t.eval) lines.push_back(t.prompt.render(e.input, e.output));
  const auto tok = corpus::Tokenizer::build(lines);
  const auto m = lm::NGramLm::train(tok, lines, 4, {0.01, 0.01, 0.01, 0.97});
  ShotConfig zero;
  zero.n_shots = 0;
  zero.seeds = {1};
  const auto r = few_shot_eval(t, [&] { return std::make_unique<lm::NGramLm>(m); }, zero);
  CHECK(r.mean == 1.0);
}

TEST_CASE("rouge-l") {
  CHECK(std::abs(rouge_l("police killed the gunman", "the gunman was killed by police") - 0.4) < 1e-9);
  CHECK(rouge_l("a b c", "a b c") == 1.0);
  CHECK(rouge_l("A b", "a B") == 1.0);
  CHECK(rouge_l("a b", "c d") == 0.0);
  CHECK(rouge_l("", "") == 0.0);
  CHECK(rouge_l("", "a") == 0.0);

  Rng rng(1);
  const std::vector<std::string> lex = {"a", "b", "c", "d", "e"};
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> c, r;
    for (auto n = uniform_index(rng, 12); n > 0; --n) c.push_back(lex[uniform_index(rng, 5)]);
    for (auto n = uniform_index(rng, 12); n > 0; --n) r.push_back(lex[uniform_index(rng, 5)]);
    const double l = double(lcs_oracle(c, r));
    double want = 0;
    if (l > 0) want = 2 * (l / c.size()) * (l / r.size()) / (l / c.size() + l / r.size());
    CHECK(rouge_l(join(c), join(r)) == want);
    CHECK(rouge_l(join(c), join(r)) == rouge_l(join(r), join(c)));
    if (!c.empty()) CHECK(rouge_l(join(c), join(c)) == 1.0);
  }
}

TEST_CASE("generation evaluation") {
  EvalTask t;
  t.name = "gen";
  t.kind = TaskKind::generation;
  t.prompt = PromptTemplate("gen", "Q: {input} A: {output}");
  for (int i = 0; i < 20; ++i) {
    const auto s = std::to_string(i);
    t.eval.push_back({"gen", "x" + s, "r" + s + "a r" + s + "b r" + s + "c"});
  }
  std::vector<std::string> lines;
  for (const auto& e : t.eval) lines.push_back(t.prompt.render(e.input, e.output) + "\n");
  const auto tok = corpus::Tokenizer::build(lines);
  const auto m = lm::NGramLm::train(tok, lines, 4, {0.01, 0.01, 0.01, 0.97});
  ShotConfig zero;
  zero.n_shots = 0;
  zero.seeds = {1};
  const auto r = generation_eval(t, m, zero, 4);
  CHECK(r.metric == "rouge_l");
  CHECK(r.mean == 1.0);
  CHECK(generation_eval(t, m, zero, 1).values == r.values);

  zero.max_new_tokens = 0;
  CHECK(generation_eval(t, m, zero).mean == 0.0);
}

TEST_CASE("dataset comparison and report csv") {
  lm::UniformScorer u(50);
  const std::vector<std::string> a = {"x y", "z"};
  const auto c = compare_datasets({{"a", a}, {"b", a}}, u);
  REQUIRE(c.rows.size() == 2);
  CHECK(c.rows[0].mean_perplexity == c.rows[1].mean_perplexity);
  CHECK(std::abs(c.rows[0].mean_perplexity - 50.0) < 1e-9);
  CHECK(c.to_csv().starts_with("set,n,mean_perplexity\na,2,"));
  CHECK(c.to_csv().ends_with("\na-b,,0\n"));
  CHECK(compare_datasets({{"only", a}}, u).rows.size() == 1);
  CHECK_THROWS_WITH_AS(compare_datasets({{"a", a}, {"empty", {}}}, u), doctest::Contains("empty"), ConfigError);

  EvalReport r{"t", "accuracy", {1, 2}, {0.5, 1.0}, 0, 0};
  aggregate(r);
  CHECK(r.mean == 0.75);
  CHECK(r.std == 0.25);
  const EvalReport rs[] = {r};
  CHECK(reports_to_csv(rs) == "task,seed,metric,value\nt,1,accuracy,0.5\nt,2,accuracy,1\n");
}

TEST_CASE("task files") {
  picl::testing::TempDir dir;
  auto t = sentiment(3, 2);
  save_task(dir / "t.json", t);
  const auto back = load_task(dir / "t.json");
  CHECK(back.name == "sst");
  CHECK(back.labels == t.labels);
  CHECK(back.train == t.train);
  CHECK(back.eval == t.eval);
  t.labels = {"Positive"};
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.labels = {"Positive", "Neutral"};
  CHECK_THROWS_AS(t.validate(), ConfigError);
}
