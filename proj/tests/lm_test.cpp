#include <doctest.h>

#include <cmath>
#include <numeric>

#include "picl/lm/external.hpp"
#include "picl/lm/neural.hpp"
#include "picl/lm/ngram.hpp"
#include "picl/lm/scorer.hpp"
#include "test_util.hpp"

using namespace picl;
using namespace picl::lm;
using corpus::Tokenizer;
using picl::testing::TempDir;

namespace {

class ConstantScorer final : public LmScorer {
 public:
  Score logprob(std::string_view text) override { return {0.0, corpus::count_tokens(text)}; }
  std::string describe() const override { return "const"; }
};

std::vector<std::string> random_texts(std::size_t n, std::size_t words, std::uint64_t seed) {
  static const std::vector<std::string> lex = {"a", "b", "c", "d", "e", ".", "f", "g"};
  Rng rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const auto len = 1 + uniform_index(rng, words);
    for (std::uint64_t w = 0; w < len; ++w) {
      t += lex[uniform_index(rng, lex.size())];
      t += uniform_index(rng, 6) == 0 ? "\n" : " ";
    }
    out.push_back(t);
  }
  return out;
}

std::vector<TokenId> random_seq(std::size_t len, std::size_t v, Rng& rng) {
  std::vector<TokenId> s{Tokenizer::kDocBoundary};
  for (std::size_t i = 1; i < len; ++i) s.push_back(static_cast<TokenId>(uniform_index(rng, v)));
  return s;
}

Tokenizer tiny_tokenizer() {
  const std::vector<std::string> texts = {"a b c d e f g h i j k l"};
  return Tokenizer::build(texts);  // 3 specials + 12 words
}

}  // namespace

TEST_CASE("ngram bigram endpoints and floor") {
  const std::vector<std::string> corpus = {"a b a b"};
  const auto tok = Tokenizer::build(corpus);
  REQUIRE(tok.vocab_size() == 5);
  const TokenId a = tok.id_of("a"), b = tok.id_of("b");
  const TokenId ha[] = {a};

  const auto bigram = NGramLm::train(tok, corpus, 2, {0.0, 1.0});
  CHECK(bigram.prob(ha, b) == 1.0);

  // three of five vocabulary ids never occur: they get 1/5 each and the
  // observed frequencies share the remaining 2/5
  const auto unigram = NGramLm::train(tok, corpus, 2, {1.0, 0.0});
  CHECK(std::abs(unigram.prob(ha, a) - 0.5 * 0.4) < 1e-15);
  CHECK(std::abs(unigram.prob({}, Tokenizer::kUnk) - 0.2) < 1e-15);

  const auto mixed = NGramLm::train(tok, corpus, 2, {0.3, 0.7});
  CHECK(std::abs(mixed.prob(ha, Tokenizer::kUnk) - 0.3 * 0.2) < 1e-15);

  CHECK_THROWS_AS(NGramLm::train(tok, corpus, 2, {0.5, 0.6}), ConfigError);
  CHECK_THROWS_AS(NGramLm::train(tok, corpus, 3, {0.5, 0.5}), ConfigError);
  CHECK_THROWS_AS(NGramLm::train(tok, {}, 1, {1.0}), ConfigError);
}

TEST_CASE("ngram perplexity matches hand counts") {
  const std::vector<std::string> corpus = {"a b a b"};
  const auto tok = Tokenizer::build(corpus);
  auto m = NGramLm::train(tok, corpus, 2, {0.5, 0.5});
  // every bigram continuation is deterministic in this corpus, so each token
  // gets 0.5 * unigram + 0.5 * 1 with unigram = 0.5 * 2/5
  const double p = 0.5 * 0.2 + 0.5 * 1.0;
  CHECK(std::abs(perplexity(m, "a b a b") - 1.0 / p) < 1e-12);
  auto pure = NGramLm::train(tok, corpus, 2, {0.0, 1.0});
  CHECK(std::abs(perplexity(pure, "a b a b") - 1.0) < 1e-12);
}

TEST_CASE("ngram distributions are normalized") {
  const auto texts = random_texts(40, 20, 1);
  const auto tok = Tokenizer::build(texts);
  const auto m = NGramLm::train(tok, texts, 3, {0.2, 0.3, 0.5});
  std::vector<double> lp(tok.vocab_size());
  for (TokenId x = 0; x < tok.vocab_size(); ++x)
    for (TokenId y = 0; y < tok.vocab_size(); ++y) {
      const TokenId hist[] = {x, y};
      m.next_logprobs(hist, lp);
      double s = 0;
      for (double l : lp) s += std::exp(l);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("ngram scores are probabilities and survive a round trip") {
  TempDir dir;
  const auto texts = random_texts(30, 15, 2);
  const auto tok = Tokenizer::build(texts);
  auto m = NGramLm::train(tok, texts, 3, {0.1, 0.4, 0.5});
  m.save(dir / "a.ngm");
  m.save(dir / "b.ngm");
  CHECK(io::sha256_file(dir / "a.ngm") == io::sha256_file(dir / "b.ngm"));
  auto back = NGramLm::load(dir / "a.ngm");
  for (const auto& t : random_texts(20, 30, 3)) {
    const auto s = m.logprob(t);
    CHECK(s.logprob <= 0.0);
    if (s.num_tokens) CHECK(std::exp(s.logprob / double(s.num_tokens)) <= 1.0);
    CHECK(back.logprob(t).logprob == s.logprob);
  }
  const auto empty = m.logprob("");
  CHECK(empty.logprob == 0.0);
  CHECK(empty.num_tokens == 0);
}

TEST_CASE("uniform and constant scorers") {
  UniformScorer u(100);
  const auto s = u.logprob("one two three four five six seven eight nine ten");
  CHECK(s.num_tokens == 10);
  CHECK(std::abs(s.logprob - 10 * std::log(1.0 / 100)) < 1e-12);
  CHECK(std::abs(perplexity(u, "x y z") - 100.0) < 1e-9);
  CHECK_THROWS_AS(perplexity(u, ""), ConfigError);
  ConstantScorer c;
  CHECK(perplexity(c, "a b") == 1.0);
}

TEST_CASE("unigram scorer ignores newline joins") {
  const auto texts = random_texts(50, 10, 4);
  UnigramScorer u(Tokenizer::build(texts), texts);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto& x = texts[uniform_index(rng, texts.size())];
    const auto& y = texts[uniform_index(rng, texts.size())];
    const auto joint = u.logprob(x + "\n" + y);
    const auto a = u.logprob(x), b = u.logprob(y);
    CHECK(std::abs(joint.logprob - (a.logprob + b.logprob)) < 1e-9);
    CHECK(joint.num_tokens == a.num_tokens + b.num_tokens);
  }
}

TEST_CASE("neural lm parameter count and normalization") {
  const auto tok = tiny_tokenizer();
  for (bool summary : {false, true}) {
    NeuralLmShape sh{0, 4, 3, 5, summary};
    const auto m = BasicNeuralLm<double>::random(tok, sh, 0.5, 1);
    const std::size_t V = tok.vocab_size(), c = 4, e = 3, h = 5;
    CHECK(m.param_count() == V * e + (c * e * h + h) + (h * V + V) + (summary ? h * e : 0));
    Rng rng(2);
    const auto seq = random_seq(12, V, rng);
    std::vector<double> p(V);
    for (std::size_t pos = 1; pos < seq.size(); ++pos) {
      m.distribution(seq, pos, p);
      CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-6);
    }
  }
  CHECK_THROWS_AS(BasicNeuralLm<float>(tok, NeuralLmShape{7, 4, 3, 5}), ConfigError);
}

TEST_CASE("neural lm loss identities") {
  const auto tok = tiny_tokenizer();
  const double V = double(tok.vocab_size());
  Rng rng(3);
  const auto seq = random_seq(10, tok.vocab_size(), rng);
  const BasicNeuralLm<double> zero(tok, NeuralLmShape{0, 4, 3, 5});
  CHECK(std::abs(lm_loss(zero, seq) - std::log(V)) < 1e-12);

  auto m = BasicNeuralLm<double>::random(tok, NeuralLmShape{0, 4, 3, 5, true}, 1.0, 4);
  const std::string text = "a b c d e f g a b";
  const auto ids = to_sequence(tok, text);
  const auto s = m.logprob(text);
  CHECK(s.num_tokens == ids.size() - 1);
  CHECK(std::abs(lm_loss(m, ids) + s.logprob / double(ids.size() - 1)) < 1e-9);
  const double l = lm_loss(m, seq);
  CHECK(std::isfinite(l));
  CHECK(l > 0.0);
  const TokenId one[] = {Tokenizer::kDocBoundary};
  CHECK_THROWS_AS(lm_loss(m, one), ConfigError);
}

TEST_CASE("neural lm gradients match finite differences") {
  const auto tok = tiny_tokenizer();
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    NeuralLmShape sh{0, 1 + std::uint32_t(uniform_index(rng, 6)), 2 + std::uint32_t(uniform_index(rng, 6)),
                     2 + std::uint32_t(uniform_index(rng, 10)), trial % 2 == 1};
    const auto m = BasicNeuralLm<double>::random(tok, sh, 1.0, 200 + trial);
    std::vector<std::vector<TokenId>> batch;
    for (int b = 0; b < 3; ++b) batch.push_back(random_seq(6 + uniform_index(rng, 10), tok.vocab_size(), rng));
    const auto res = grad_check_lm(m, batch, 1e-5, 64, trial);
    CAPTURE(trial);
    CHECK(res.n_checked == 64);
    CHECK(res.max_relative_error < 1e-4);
  }
}

TEST_CASE("absent tokens get no embedding gradient") {
  const auto tok = tiny_tokenizer();
  const auto m = BasicNeuralLm<double>::random(tok, NeuralLmShape{0, 3, 4, 6, true}, 1.0, 9);
  const TokenId a = tok.id_of("a"), b = tok.id_of("b"), z = tok.id_of("l");
  const std::vector<TokenId> seq = {Tokenizer::kDocBoundary, a, b, a, a, b, b, a};
  std::vector<double> grad(m.param_count(), 0.0);
  m.accumulate(seq, 1, seq.size(), grad, 1.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(grad[z * 4 + i] == 0.0);
  CHECK_THROWS_WITH_AS(grad_check_lm(m, {seq}, 0.0), "eps must be positive", ConfigError);
}

TEST_CASE("overfitting one sequence and greedy decoding") {
  const std::vector<std::string> texts = {"a b c\n"};
  const auto tok = Tokenizer::build(texts);
  auto m = NeuralLm::random(tok, NeuralLmShape{0, 3, 8, 16}, 0.5, 1);
  const auto seq = to_sequence(tok, texts[0]);
  const double before = lm_loss(m, seq);
  MixConfig cfg;
  cfg.alpha = 0.0;
  cfg.steps = 500;
  cfg.batch = 1;
  cfg.lr = 0.5;
  cfg.window = seq.size();
  train_mixed(m, {}, {seq}, cfg);
  CHECK(lm_loss(m, seq) < 0.1 * before);
  CHECK(greedy_decode(m, "a", 10, Tokenizer::kNewline) == "b c");
  CHECK(greedy_decode(m, "a", 10, Tokenizer::kNewline) == greedy_decode(m, "a", 10, Tokenizer::kNewline));
  CHECK(greedy_decode(m, "a", 0, Tokenizer::kNewline).empty());
}

TEST_CASE("windows cover every target position") {
  std::vector<std::vector<TokenId>> seqs = {std::vector<TokenId>(20, 1), std::vector<TokenId>(3, 1),
                                            std::vector<TokenId>(1, 1)};
  const auto ws = make_windows(seqs, 8);
  std::vector<int> hits(20, 0);
  for (const auto& w : ws)
    if (w.seq == 0)
      for (auto t = w.from; t < w.to; ++t) ++hits[t];
  for (std::size_t t = 1; t < 20; ++t) CHECK(hits[t] >= 1);
  CHECK(ws.back().seq == 1);
  CHECK(ws.back().from == 1);
  CHECK(ws.back().to == 3);
}

TEST_CASE("mixed objective endpoints and trends") {
  const auto texts = random_texts(40, 30, 7);
  const auto tok = Tokenizer::build(texts);
  std::vector<std::vector<TokenId>> icl, docs;
  for (std::size_t i = 0; i < texts.size(); ++i)
    (i % 2 ? icl : docs).push_back(to_sequence(tok, texts[i]));
  const auto init = NeuralLm::random(tok, NeuralLmShape{0, 4, 8, 16}, 0.5, 3);
  MixConfig cfg;
  cfg.steps = 60;
  cfg.batch = 4;
  cfg.lr = 0.2;
  cfg.seed = 11;

  cfg.alpha = 1.0;
  auto with_docs = init;
  const auto c1 = train_mixed(with_docs, icl, docs, cfg);
  auto alone = init;
  const auto c2 = train_mixed(alone, icl, {}, cfg);
  CHECK(with_docs == alone);
  CHECK(c1.icl_loss == c2.icl_loss);
  CHECK(c1.lm_loss.size() == 60);
  CHECK(c2.lm_loss.empty());

  cfg.alpha = 0.5;
  cfg.steps = 400;
  auto mixed = init;
  const auto c = train_mixed(mixed, icl, docs, cfg);
  auto mean = [](const std::vector<double>& v, std::size_t from, std::size_t n) {
    return std::accumulate(v.begin() + from, v.begin() + from + n, 0.0) / double(n);
  };
  CHECK(mean(c.icl_loss, 380, 20) < mean(c.icl_loss, 0, 20));
  CHECK(mean(c.lm_loss, 380, 20) < mean(c.lm_loss, 0, 20));

  auto again = init;
  train_mixed(again, icl, docs, cfg);
  CHECK(again == mixed);

  cfg.alpha = 0.5;
  auto bad = init;
  CHECK_THROWS_AS(train_mixed(bad, {}, docs, cfg), ConfigError);
  CHECK_THROWS_AS(train_mixed(bad, icl, {}, cfg), ConfigError);
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(train_mixed(bad, icl, docs, cfg), ConfigError);
}

TEST_CASE("neural lm file round trip") {
  TempDir dir;
  const auto m = NeuralLm::random(tiny_tokenizer(), NeuralLmShape{0, 3, 4, 5, true}, 0.5, 8);
  m.save(dir / "m.nlm");
  const auto back = NeuralLm::load(dir / "m.nlm");
  CHECK(back == m);
  CHECK(back.tokenizer().vocab_size() == m.tokenizer().vocab_size());
}

// ---- external scorer against the mock child ----

namespace {
ExternalScorerOptions mock(std::vector<std::string> args) {
  ExternalScorerOptions o;
  o.argv = {PICL_MOCK_SCORER};
  o.argv.insert(o.argv.end(), args.begin(), args.end());
  o.timeout = std::chrono::milliseconds(5000);
  return o;
}
}  // namespace

TEST_CASE("external scorer conforms on a simple request") {
  ExternalScorer s(mock({"echo"}));
  const auto r = s.logprob("one two , three");
  CHECK(r.num_tokens == 4);
  CHECK(r.logprob == -4.0);
  const auto e = s.logprob("");
  CHECK(e.num_tokens == 0);
}

TEST_CASE("pipelined requests are matched by id") {
  ExternalScorer s(mock({"shuffle"}));
  std::vector<std::string> texts;
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) texts.push_back(std::string(1 + uniform_index(rng, 30), 'x') + " y z");
  for (int i = 0; i < 1000; i += 3) texts[i] += " w";
  const auto out = s.logprob_batch(texts);
  REQUIRE(out.size() == 1000);
  for (int i = 0; i < 1000; ++i) {
    const double n = double(corpus::count_tokens(texts[i]));
    CHECK(out[i].logprob == -n);
  }
}

TEST_CASE("protocol violations surface the raw line") {
  ExternalScorer s(mock({"malformed"}));
  try {
    s.logprob("a b");
    FAIL("expected a protocol error");
  } catch (const ProtocolError& e) {
    CHECK(e.raw_line() == "{not json");
  }
  ExternalScorer err(mock({"error"}));
  CHECK_THROWS_AS(err.logprob("a"), ProtocolError);
  CHECK_THROWS_AS(ExternalScorer(mock({"noready"})), Error);
}

TEST_CASE("timeouts and restarts") {
  auto opts = mock({"hang"});
  opts.timeout = std::chrono::milliseconds(200);
  ExternalScorer hang(opts);
  CHECK_THROWS_WITH_AS(hang.logprob("a"), doctest::Contains("timed out"), Error);

  TempDir dir;
  ExternalScorer crash(mock({"crash-once", (dir / "marker").string()}));
  std::vector<std::string> texts(10, "p q r");
  const auto out = crash.logprob_batch(texts);
  CHECK(crash.restarts() == 1);
  for (const auto& r : out) CHECK(r.logprob == -3.0);
}

TEST_CASE("scorer command splitting") {
  CHECK(ExternalScorer::split_command("python3 -m adapter --model 'my model' \"a\\\"b\"") ==
        std::vector<std::string>{"python3", "-m", "adapter", "--model", "my model", "a\"b"});
  CHECK(ExternalScorer::split_command("  ").empty());
  CHECK_THROWS_AS(ExternalScorer::split_command("a 'b"), ConfigError);
}
