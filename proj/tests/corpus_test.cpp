#include <doctest.h>

#include <string>

#include "picl/corpus/corpus.hpp"
#include "picl/corpus/tokenizer.hpp"
#include "picl/rng.hpp"
#include "test_util.hpp"

using namespace picl;
using namespace picl::corpus;
using picl::testing::TempDir;

namespace {

// A line with exactly n word tokens.
std::string words(std::size_t n, const std::string& stem = "w") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s.push_back(' ');
    s += stem + std::to_string(i % 7);
  }
  return s;
}

std::string random_text(Rng& rng) {
  static const char* pieces[] = {"alpha", "Beta", "42", ",", ".", "ümlaut", "naïve",
                                 "—", "x_y", "!", "\n", "  ", "\t", "don't", "東京"};
  std::string s;
  const auto n = uniform_index(rng, 12);
  for (std::uint64_t i = 0; i < n; ++i) {
    s += pieces[uniform_index(rng, std::size(pieces))];
    if (uniform_index(rng, 2)) s.push_back(' ');
  }
  return s;
}

}  // namespace

TEST_CASE("ingest maps jsonl fields directly") {
  TempDir dir;
  const auto path = dir.write("docs.jsonl", "{\"id\":\"a\",\"text\":\"x\\ny\"}\n");
  const auto docs = ingest_all(path, InputFormat::jsonl);
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].id == "a");
  CHECK(docs[0].text == "x\ny");
}

TEST_CASE("ingest splits plain files on blank lines") {
  TempDir dir;
  const auto path = dir.write("docs.txt", "p1\n\np2");
  const auto docs = ingest_all(path, InputFormat::plain);
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].id == "doc-0");
  CHECK(docs[0].text == "p1");
  CHECK(docs[1].id == "doc-1");
  CHECK(docs[1].text == "p2");
}

TEST_CASE("ingest reports the malformed line number") {
  TempDir dir;
  const auto path = dir.write("docs.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n{bad\n");
  try {
    ingest_all(path, InputFormat::jsonl);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("ingest skips empty documents and counts them") {
  TempDir dir;
  const auto path = dir.write("docs.jsonl",
                              "{\"id\":\"a\",\"text\":\"\"}\n{\"id\":\"b\",\"text\":\"ok\"}\n");
  IngestStats stats;
  const auto docs = ingest_all(path, InputFormat::jsonl, &stats);
  CHECK(docs.size() == 1);
  CHECK(stats.skipped_empty == 1);
}

TEST_CASE("ingest rejects duplicate ids") {
  TempDir dir;
  const auto path = dir.write("docs.jsonl",
                              "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
  CHECK_THROWS_AS(ingest_all(path, InputFormat::jsonl), FormatError);
}

TEST_CASE("tokenize edge cases") {
  Tokenizer tok = Tokenizer::build(std::vector<std::string>{"a b c"});
  CHECK(tok.encode("").empty());
  const auto ids = tok.encode("a a a");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == ids[1]);
  CHECK(ids[1] == ids[2]);
  CHECK(tok.encode("zzz")[0] == Tokenizer::kUnk);
  CHECK(tok.encode("a\nb")[1] == Tokenizer::kNewline);
  CHECK(split_tokens("Hello, world!").size() == 4);
}

TEST_CASE("tokenize(t + ' ' + t) has twice the tokens of t") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const std::string t = random_text(rng);
    CHECK(count_tokens(t + " " + t) == 2 * count_tokens(t));
  }
}

TEST_CASE("decode(encode(t)) reproduces t up to whitespace") {
  Rng rng(12);
  std::vector<std::string> texts;
  for (int i = 0; i < 200; ++i) texts.push_back(random_text(rng));
  const Tokenizer tok = Tokenizer::build(texts);
  for (const auto& t : texts) {
    const std::string round = tok.decode(tok.encode(t));
    CHECK(split_tokens(round) == split_tokens(t));
  }
}

TEST_CASE("tokenizer JSON round trip preserves ids") {
  const Tokenizer tok = Tokenizer::build(std::vector<std::string>{"b a a c c c"});
  const Tokenizer back = Tokenizer::from_json(tok.to_json());
  CHECK(back.vocab_size() == tok.vocab_size());
  CHECK(back.encode("c a b q") == tok.encode("c a b q"));
  CHECK(tok.id_of("c") == 3);  // most frequent after the reserved ids
}

TEST_CASE("split_and_merge merge rule") {
  Document d{"d", words(50) + "\n" + words(60) + "\n" + words(200), "", {}};
  const auto r = split_and_merge(d);
  REQUIRE(r.paragraphs.size() == 2);
  CHECK(r.paragraphs[0].token_count == 111);  // 50 + newline + 60
  CHECK(r.paragraphs[1].token_count == 200);
  CHECK(r.paragraphs[0].text == words(50) + "\n" + words(60));
  CHECK(r.paragraphs[1].ordinal == 1);
}

TEST_CASE("split_and_merge drops overlong paragraphs") {
  const auto r = split_and_merge(Document{"d", words(600), "", {}});
  CHECK(r.paragraphs.empty());
  CHECK(r.dropped.size() == 1);
}

TEST_CASE("split_and_merge keeps a lone 300-token paragraph unchanged") {
  const std::string text = words(300);
  const auto r = split_and_merge(Document{"d", text, "", {}});
  REQUIRE(r.paragraphs.size() == 1);
  CHECK(r.paragraphs[0].text == text);
  CHECK(r.paragraphs[0].token_count == 300);
}

TEST_CASE("split_and_merge emits short trailing buffers") {
  const auto r = split_and_merge(Document{"d", words(200) + "\n" + words(10), "", {}});
  REQUIRE(r.paragraphs.size() == 2);
  CHECK(r.paragraphs[1].token_count == 10);
}

TEST_CASE("split_and_merge invariants on random documents") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    std::string expected;  // original minus token-free lines
    const auto n_lines = 1 + uniform_index(rng, 12);
    for (std::uint64_t i = 0; i < n_lines; ++i) {
      const auto len = uniform_index(rng, 5) == 0 ? 0 : 1 + uniform_index(rng, 700);
      const std::string line = words(len, "t" + std::to_string(i) + "_");
      if (i) text.push_back('\n');
      text += line;
      if (len > 0) {
        if (!expected.empty()) expected.push_back('\n');
        expected += line;
      }
    }
    const Document doc{"doc", text, "", {}};
    const auto r = split_and_merge(doc);
    const auto again = split_and_merge(doc);

    // idempotence
    REQUIRE(again.paragraphs.size() == r.paragraphs.size());
    for (std::size_t i = 0; i < r.paragraphs.size(); ++i)
      CHECK(again.paragraphs[i].text == r.paragraphs[i].text);

    for (const auto& p : r.paragraphs) {
      CHECK(p.token_count == count_tokens(p.text));
      CHECK(p.token_count >= 1);
      CHECK(p.token_count <= 500);
    }

    // conservation: emitted and dropped paragraphs tile the document
    {
      std::size_t pi = 0, di = 0;
      std::string_view rest = expected;
      while (!rest.empty()) {
        if (pi < r.paragraphs.size() && rest.starts_with(r.paragraphs[pi].text)) {
          rest.remove_prefix(r.paragraphs[pi].text.size());
          ++pi;
        } else if (di < r.dropped.size() && rest.starts_with(r.dropped[di])) {
          rest.remove_prefix(r.dropped[di].size());
          ++di;
        } else {
          break;
        }
        if (!rest.empty() && rest.front() == '\n') rest.remove_prefix(1);
      }
      CHECK(rest.empty());
      CHECK(pi == r.paragraphs.size());
      CHECK(di == r.dropped.size());
    }
  }
}

TEST_CASE("adjacent emitted paragraphs could not have been merged") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const auto n_lines = 1 + uniform_index(rng, 10);
    for (std::uint64_t i = 0; i < n_lines; ++i) {
      if (i) text.push_back('\n');
      text += words(1 + uniform_index(rng, 150), "u");
    }
    const auto r = split_and_merge(Document{"d", text, "", {}});
    for (std::size_t i = 0; i + 1 < r.paragraphs.size(); ++i) {
      // the next paragraph starts with a line whose join would reach 128
      const std::string_view next = r.paragraphs[i + 1].text;
      const std::string_view first_line = next.substr(0, next.find('\n'));
      CHECK(r.paragraphs[i].token_count + 1 + count_tokens(first_line) >= 128);
    }
  }
}

TEST_CASE("build_store assigns dense ids in document order") {
  std::vector<Document> docs;
  for (int i = 0; i < 20; ++i)
    docs.push_back({"d" + std::to_string(i), words(130) + "\n" + words(140), "", "task"});
  const auto serial = build_store(docs, {}, 1);
  const auto parallel = build_store(docs, {}, 4);
  REQUIRE(serial.store.size() == 40);
  REQUIRE(parallel.store.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(serial.store.at(i).id == i);
    CHECK(serial.store.at(i).text == parallel.store.at(i).text);
    CHECK(serial.store.at(i).doc_id == parallel.store.at(i).doc_id);
  }
  CHECK(serial.doc_tasks.size() == 20);
}

TEST_CASE("paragraph store JSONL round trip") {
  TempDir dir;
  std::vector<Document> docs = {{"a", words(150) + "\n" + words(3), "", {}}};
  const auto built = build_store(docs, {}, 1);
  built.store.save_jsonl(dir / "p.jsonl");
  const auto back = ParagraphStore::load_jsonl(dir / "p.jsonl");
  REQUIRE(back.size() == built.store.size());
  CHECK(back.at(1).text == built.store.at(1).text);
  CHECK(back.at(1).token_count == built.store.at(1).token_count);
}

TEST_CASE("corpus_stats arithmetic") {
  std::vector<Paragraph> ps(2);
  ps[0] = {0, "a", 0, words(100), 100};
  ps[1] = {1, "a", 1, words(200), 200};
  const auto m = corpus_stats(ParagraphStore(ps));
  CHECK(m.mean_paragraph_tokens == doctest::Approx(150.0).epsilon(1e-12));
  CHECK(m.n_paragraphs == 2);
  CHECK(m.n_docs == 1);
}

TEST_CASE("corpus_stats rejects an empty store") {
  CHECK_THROWS_WITH_AS(corpus_stats(ParagraphStore{}), "empty corpus", Error);
}

TEST_CASE("corpus_stats histogram recount on 1k paragraphs") {
  Rng rng(1);
  std::vector<Paragraph> ps;
  std::vector<std::size_t> oracle(kHistogramBuckets, 0);
  double total = 0;
  for (ParagraphId i = 0; i < 1000; ++i) {
    const auto n = static_cast<std::uint32_t>(1 + uniform_index(rng, 500));
    ps.push_back({i, "d" + std::to_string(i / 10), 0, "", n});
    total += n;
    std::size_t b = 0;
    while (b + 1 < kHistogramBuckets && n > (b + 1) * kHistogramWidth) ++b;
    ++oracle[b];
  }
  const auto m = corpus_stats(ParagraphStore(ps));
  std::size_t sum = 0;
  for (auto c : m.token_histogram) sum += c;
  CHECK(sum == 1000);
  CHECK(m.token_histogram == oracle);
  CHECK(std::abs(m.mean_paragraph_tokens - total / 1000.0) < 1e-9);
  CHECK(m.n_docs == 100);
}
