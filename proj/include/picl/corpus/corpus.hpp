#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "picl/common.hpp"

namespace picl::corpus {

struct Document {
  std::string id;
  std::string text;
  std::string source;
  /// Optional intrinsic-task label; only synthetic corpora carry one.
  std::optional<std::string> task;
};

struct Paragraph {
  ParagraphId id = 0;
  std::string doc_id;
  std::uint32_t ordinal = 0;
  std::string text;
  std::uint32_t token_count = 0;
};

enum class InputFormat { jsonl, plain };
InputFormat parse_input_format(std::string_view s);

struct IngestStats {
  std::size_t n_docs = 0;
  std::size_t skipped_empty = 0;
};

/// Streams documents in file order. JSONL lines need "id" and "text";
/// "source" and "task" are optional. Plain files hold one document per
/// block separated by blank lines and are named doc-<index>.
IngestStats ingest(const std::filesystem::path& path, InputFormat format,
                   const std::function<void(Document&&)>& sink,
                   std::string_view source_tag = "");
std::vector<Document> ingest_all(const std::filesystem::path& path, InputFormat format,
                                 IngestStats* stats = nullptr);

struct SplitOptions {
  std::size_t min_merge = 128;
  std::size_t max_len = 500;
};

struct SplitResult {
  std::vector<Paragraph> paragraphs;  // ids unassigned, ordinals dense
  std::vector<std::string> dropped;   // over-length paragraphs in text order
};

/// Splits on "\n", skips lines without tokens, merges a line into the running
/// buffer while the joined token count stays below min_merge, and drops
/// emitted paragraphs longer than max_len.
SplitResult split_and_merge(const Document& doc, const SplitOptions& opts = {});

struct CorpusManifest {
  std::size_t n_docs = 0;
  std::size_t n_paragraphs = 0;
  double mean_paragraph_tokens = 0.0;
  /// Bucket i counts paragraphs with token_count in [50*i+1, 50*(i+1)];
  /// the last bucket also absorbs anything longer.
  std::vector<std::size_t> token_histogram;
  std::size_t dropped_overlong = 0;
  std::size_t skipped_empty_docs = 0;

  nlohmann::json to_json() const;
  static CorpusManifest from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kHistogramBuckets = 10;
inline constexpr std::size_t kHistogramWidth = 50;

class ParagraphStore {
 public:
  ParagraphStore() = default;
  explicit ParagraphStore(std::vector<Paragraph> paragraphs);

  const std::vector<Paragraph>& paragraphs() const { return paragraphs_; }
  std::size_t size() const { return paragraphs_.size(); }
  bool empty() const { return paragraphs_.empty(); }
  /// Paragraph ids are dense, so lookup is positional.
  const Paragraph& at(ParagraphId id) const;

  void save_jsonl(const std::filesystem::path& path) const;
  static ParagraphStore load_jsonl(const std::filesystem::path& path);

 private:
  std::vector<Paragraph> paragraphs_;
};

struct BuildResult {
  ParagraphStore store;
  std::size_t dropped_overlong = 0;
  std::size_t n_docs = 0;
  /// doc id -> task label for documents that carry one.
  std::map<std::string, std::string> doc_tasks;
};

/// Splits documents in parallel and assigns paragraph ids in document order.
BuildResult build_store(const std::vector<Document>& docs, const SplitOptions& opts,
                        unsigned threads = 1);

/// Throws "empty corpus" on an empty store.
CorpusManifest corpus_stats(const ParagraphStore& store, std::size_t dropped_overlong = 0);

}  // namespace picl::corpus
