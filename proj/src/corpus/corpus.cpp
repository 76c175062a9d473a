#include "picl/corpus/corpus.hpp"

#include <fstream>
#include <numeric>
#include <set>

#include "picl/corpus/tokenizer.hpp"
#include "picl/io.hpp"
#include "picl/parallel.hpp"

namespace picl::corpus {
namespace {

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

std::string strip_cr(std::string s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\r' && i + 1 < s.size() && s[i + 1] == '\n') continue;
    out.push_back(s[i]);
  }
  return out;
}

}  // namespace

InputFormat parse_input_format(std::string_view s) {
  if (s == "jsonl") return InputFormat::jsonl;
  if (s == "plain") return InputFormat::plain;
  throw ConfigError("input format must be jsonl or plain, got " + std::string(s));
}

IngestStats ingest(const std::filesystem::path& path, InputFormat format,
                   const std::function<void(Document&&)>& sink,
                   std::string_view source_tag) {
  IngestStats stats;
  std::set<std::string> seen;
  auto emit = [&](Document&& doc, const std::string& where) {
    if (is_blank(doc.text)) {
      ++stats.skipped_empty;
      return;
    }
    if (doc.id.empty()) throw FormatError(where + ": document id is empty");
    if (!seen.insert(doc.id).second)
      throw FormatError(where + ": duplicate document id '" + doc.id + "'");
    ++stats.n_docs;
    sink(std::move(doc));
  };

  if (format == InputFormat::jsonl) {
    io::for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& j) {
      const std::string where = path.string() + ":" + std::to_string(line);
      if (!j.is_object() || !j.contains("id") || !j.contains("text") ||
          !j["id"].is_string() || !j["text"].is_string())
        throw FormatError(where + ": expected {\"id\": string, \"text\": string}");
      Document d;
      d.id = j["id"].get<std::string>();
      d.text = strip_cr(j["text"].get<std::string>());
      d.source = j.value("source", std::string(source_tag));
      if (j.contains("task") && j["task"].is_string()) d.task = j["task"].get<std::string>();
      emit(std::move(d), where);
    });
    return stats;
  }

  const std::string text = strip_cr(io::read_text(path));
  std::size_t index = 0;
  std::string block;
  auto flush = [&] {
    if (is_blank(block)) {
      block.clear();
      return;
    }
    while (!block.empty() && block.back() == '\n') block.pop_back();
    Document d;
    d.id = "doc-" + std::to_string(index++);
    d.text = std::move(block);
    d.source = std::string(source_tag);
    emit(std::move(d), path.string());
    block.clear();
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line = std::string_view(text).substr(
        pos, nl == std::string::npos ? std::string::npos : nl - pos);
    if (is_blank(line)) {
      flush();
    } else {
      block.append(line);
      block.push_back('\n');
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  flush();
  return stats;
}

std::vector<Document> ingest_all(const std::filesystem::path& path, InputFormat format,
                                 IngestStats* stats) {
  std::vector<Document> docs;
  const IngestStats s = ingest(path, format, [&](Document&& d) { docs.push_back(std::move(d)); });
  if (stats) *stats = s;
  return docs;
}

SplitResult split_and_merge(const Document& doc, const SplitOptions& opts) {
  SplitResult result;
  std::string buffer;
  std::size_t buffer_tokens = 0;
  bool have_buffer = false;

  auto emit = [&] {
    if (!have_buffer) return;
    if (buffer_tokens > opts.max_len) {
      result.dropped.push_back(std::move(buffer));
    } else {
      Paragraph p;
      p.doc_id = doc.id;
      p.ordinal = static_cast<std::uint32_t>(result.paragraphs.size());
      p.text = std::move(buffer);
      p.token_count = static_cast<std::uint32_t>(buffer_tokens);
      result.paragraphs.push_back(std::move(p));
    }
    buffer.clear();
    buffer_tokens = 0;
    have_buffer = false;
  };

  std::string_view text = doc.text;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    const std::size_t line_tokens = count_tokens(line);
    if (line_tokens > 0) {
      // The joining newline is itself a token.
      if (have_buffer && buffer_tokens + 1 + line_tokens < opts.min_merge) {
        buffer.push_back('\n');
        buffer.append(line);
        buffer_tokens += 1 + line_tokens;
      } else {
        emit();
        buffer.assign(line);
        buffer_tokens = line_tokens;
        have_buffer = true;
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  emit();
  return result;
}

nlohmann::json CorpusManifest::to_json() const {
  return {{"n_docs", n_docs},
          {"n_paragraphs", n_paragraphs},
          {"mean_paragraph_tokens", mean_paragraph_tokens},
          {"token_histogram", token_histogram},
          {"histogram_bucket_width", kHistogramWidth},
          {"dropped_overlong", dropped_overlong},
          {"skipped_empty_docs", skipped_empty_docs}};
}

CorpusManifest CorpusManifest::from_json(const nlohmann::json& j) {
  try {
    CorpusManifest m;
    m.n_docs = j.at("n_docs").get<std::size_t>();
    m.n_paragraphs = j.at("n_paragraphs").get<std::size_t>();
    m.mean_paragraph_tokens = j.at("mean_paragraph_tokens").get<double>();
    m.token_histogram = j.at("token_histogram").get<std::vector<std::size_t>>();
    m.dropped_overlong = j.at("dropped_overlong").get<std::size_t>();
    m.skipped_empty_docs = j.value("skipped_empty_docs", std::size_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus manifest: ") + e.what());
  }
}

ParagraphStore::ParagraphStore(std::vector<Paragraph> paragraphs)
    : paragraphs_(std::move(paragraphs)) {
  for (std::size_t i = 0; i < paragraphs_.size(); ++i)
    if (paragraphs_[i].id != i)
      throw FormatError("paragraph ids must be dense and in order (row " +
                        std::to_string(i) + " has id " +
                        std::to_string(paragraphs_[i].id) + ")");
}

const Paragraph& ParagraphStore::at(ParagraphId id) const {
  if (id >= paragraphs_.size())
    throw Error("unknown paragraph id " + std::to_string(id));
  return paragraphs_[id];
}

void ParagraphStore::save_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& p : paragraphs_) {
    const nlohmann::json j = {{"id", p.id},
                              {"doc_id", p.doc_id},
                              {"ordinal", p.ordinal},
                              {"text", p.text},
                              {"token_count", p.token_count}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

ParagraphStore ParagraphStore::load_jsonl(const std::filesystem::path& path) {
  std::vector<Paragraph> ps;
  io::for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& j) {
    try {
      Paragraph p;
      p.id = j.at("id").get<ParagraphId>();
      p.doc_id = j.at("doc_id").get<std::string>();
      p.ordinal = j.at("ordinal").get<std::uint32_t>();
      p.text = j.at("text").get<std::string>();
      p.token_count = j.at("token_count").get<std::uint32_t>();
      ps.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return ParagraphStore(std::move(ps));
}

BuildResult build_store(const std::vector<Document>& docs, const SplitOptions& opts,
                        unsigned threads) {
  std::vector<SplitResult> shards(docs.size());
  parallel_for(docs.size(), threads,
               [&](std::size_t i) { shards[i] = split_and_merge(docs[i], opts); });

  BuildResult out;
  out.n_docs = docs.size();
  std::vector<Paragraph> all;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    out.dropped_overlong += shards[d].dropped.size();
    if (docs[d].task) out.doc_tasks[docs[d].id] = *docs[d].task;
    for (auto& p : shards[d].paragraphs) {
      p.id = all.size();
      all.push_back(std::move(p));
    }
  }
  out.store = ParagraphStore(std::move(all));
  return out;
}

CorpusManifest corpus_stats(const ParagraphStore& store, std::size_t dropped_overlong) {
  if (store.empty()) throw Error("empty corpus");
  CorpusManifest m;
  std::set<std::string_view> docs;
  m.token_histogram.assign(kHistogramBuckets, 0);
  std::uint64_t total = 0;
  for (const auto& p : store.paragraphs()) {
    docs.insert(p.doc_id);
    total += p.token_count;
    const std::size_t bucket =
        std::min<std::size_t>(p.token_count == 0 ? 0 : (p.token_count - 1) / kHistogramWidth,
                              kHistogramBuckets - 1);
    ++m.token_histogram[bucket];
  }
  m.n_docs = docs.size();
  m.n_paragraphs = store.size();
  m.mean_paragraph_tokens = static_cast<double>(total) / static_cast<double>(store.size());
  m.dropped_overlong = dropped_overlong;
  return m;
}

}  // namespace picl::corpus
