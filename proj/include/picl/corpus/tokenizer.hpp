#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace picl::corpus {

using TokenId = std::uint32_t;

/// Splits text into word runs, single punctuation marks, and newline tokens.
/// Other whitespace separates tokens and is discarded. Non-ASCII code points
/// are word characters unless they fall in a Unicode punctuation or space
/// block. Views point into `text`.
std::vector<std::string_view> split_tokens(std::string_view text);

/// Number of tokens split_tokens would return, without allocating views.
std::size_t count_tokens(std::string_view text);

/// ASCII-lowercased copy.
std::string ascii_lower(std::string_view s);

/// Word/punctuation tokenizer with a vocabulary built over a corpus.
/// Ids 0..2 are reserved: unknown, document boundary, and the newline token.
class Tokenizer {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kDocBoundary = 1;
  static constexpr TokenId kNewline = 2;
  static constexpr std::string_view kUnkText = "<unk>";
  static constexpr std::string_view kDocText = "<doc>";
  static constexpr std::string_view kNewlineText = "\n";

  Tokenizer();

  /// Vocabulary ordered by descending frequency, ties by byte order. When
  /// max_vocab > 0 the vocabulary (specials included) is capped at that size.
  static Tokenizer build(std::span<const std::string> texts, std::size_t max_vocab = 0);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;
  std::size_t count(std::string_view text) const { return count_tokens(text); }

  TokenId id_of(std::string_view token) const;
  const std::string& token(TokenId id) const { return vocab_.at(id); }
  std::size_t vocab_size() const { return vocab_.size(); }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void index();
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Joins token strings with single spaces; newline tokens attach without
/// surrounding spaces.
std::string join_tokens(std::span<const std::string_view> tokens);

}  // namespace picl::corpus
