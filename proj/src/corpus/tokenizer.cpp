#include "picl/corpus/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "picl/common.hpp"
#include "picl/io.hpp"

namespace picl::corpus {
namespace {

enum class CharClass { space, newline, punct, word };

// Decodes one UTF-8 sequence at text[pos]; malformed bytes decode as a
// single-byte code point in the private-use range so they stay word chars.
char32_t decode_utf8(std::string_view text, std::size_t pos, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  auto cont = [&](std::size_t i) -> int {
    if (pos + i >= text.size()) return -1;
    const auto b = static_cast<unsigned char>(text[pos + i]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  int need = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    need = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    need = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    need = 3;
    cp = b0 & 0x07;
  } else {
    len = 1;
    return 0xE000 + b0;
  }
  for (int i = 1; i <= need; ++i) {
    const int c = cont(static_cast<std::size_t>(i));
    if (c < 0) {
      len = 1;
      return 0xE000 + b0;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  len = static_cast<std::size_t>(need) + 1;
  return cp;
}

CharClass classify(char32_t cp) {
  if (cp == U'\n') return CharClass::newline;
  if (cp == U' ' || cp == U'\t' || cp == U'\r' || cp == U'\f' || cp == U'\v')
    return CharClass::space;
  if (cp < 0x80) {
    if ((cp >= U'0' && cp <= U'9') || (cp >= U'a' && cp <= U'z') ||
        (cp >= U'A' && cp <= U'Z') || cp == U'_')
      return CharClass::word;
    if (cp < 0x20 || cp == 0x7F) return CharClass::space;
    return CharClass::punct;
  }
  if (cp == 0x00A0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200B) ||
      cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000 ||
      cp == 0xFEFF)
    return CharClass::space;
  if ((cp >= 0x00A1 && cp <= 0x00BF) || cp == 0x00D7 || cp == 0x00F7 ||
      (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
      (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0xFF01 && cp <= 0xFF0F) ||
      (cp >= 0xFF1A && cp <= 0xFF20))
    return CharClass::punct;
  return CharClass::word;
}

template <typename Emit>
void lex(std::string_view text, Emit&& emit) {
  std::size_t i = 0;
  std::size_t word_start = std::string_view::npos;
  while (i < text.size()) {
    std::size_t len = 1;
    const char32_t cp = decode_utf8(text, i, len);
    const CharClass cls = classify(cp);
    if (cls == CharClass::word) {
      if (word_start == std::string_view::npos) word_start = i;
    } else {
      if (word_start != std::string_view::npos) {
        emit(text.substr(word_start, i - word_start));
        word_start = std::string_view::npos;
      }
      if (cls != CharClass::space) emit(text.substr(i, len));
    }
    i += len;
  }
  if (word_start != std::string_view::npos) emit(text.substr(word_start));
}

}  // namespace

std::vector<std::string_view> split_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  lex(text, [&](std::string_view t) { out.push_back(t); });
  return out;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  lex(text, [&](std::string_view) { ++n; });
  return n;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::string join_tokens(std::span<const std::string_view> tokens) {
  std::string out;
  bool after_newline = true;
  for (std::string_view t : tokens) {
    if (t == "\n") {
      out.push_back('\n');
      after_newline = true;
      continue;
    }
    if (!after_newline) out.push_back(' ');
    out.append(t);
    after_newline = false;
  }
  return out;
}

Tokenizer::Tokenizer() {
  vocab_ = {std::string(kUnkText), std::string(kDocText), std::string(kNewlineText)};
  index();
}

void Tokenizer::index() {
  ids_.clear();
  ids_.reserve(vocab_.size());
  for (TokenId i = 0; i < vocab_.size(); ++i) {
    if (!ids_.emplace(vocab_[i], i).second)
      throw FormatError("duplicate vocabulary entry: " + vocab_[i]);
  }
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, std::size_t max_vocab) {
  std::map<std::string, std::uint64_t, std::less<>> freq;
  for (const auto& t : texts) {
    lex(t, [&](std::string_view tok) {
      if (tok == "\n") return;
      auto it = freq.find(tok);
      if (it == freq.end())
        freq.emplace(std::string(tok), 1);
      else
        ++it->second;
    });
  }
  std::vector<std::pair<std::string, std::uint64_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokenizer tok;
  for (auto& [s, n] : entries) {
    if (max_vocab > 0 && tok.vocab_.size() >= max_vocab) break;
    if (s == kUnkText || s == kDocText) continue;
    tok.vocab_.push_back(std::move(s));
  }
  tok.index();
  return tok;
}

TokenId Tokenizer::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::string key;
  lex(text, [&](std::string_view t) {
    key.assign(t);
    auto it = ids_.find(key);
    out.push_back(it == ids_.end() ? kUnk : it->second);
  });
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::vector<std::string_view> toks;
  toks.reserve(ids.size());
  for (TokenId id : ids) toks.push_back(id < vocab_.size() ? vocab_[id] : vocab_[kUnk]);
  return join_tokens(toks);
}

nlohmann::json Tokenizer::to_json() const {
  return {{"kind", "unicode-word-punct"}, {"vocab", vocab_}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("kind", "") != "unicode-word-punct" ||
      !j.contains("vocab") || !j["vocab"].is_array())
    throw FormatError("tokenizer JSON must carry kind=unicode-word-punct and a vocab list");
  Tokenizer tok;
  tok.vocab_ = j["vocab"].get<std::vector<std::string>>();
  if (tok.vocab_.size() < 3 || tok.vocab_[kUnk] != kUnkText ||
      tok.vocab_[kDocBoundary] != kDocText || tok.vocab_[kNewline] != kNewlineText)
    throw FormatError("tokenizer vocab is missing the reserved entries");
  tok.index();
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  io::write_json(path, to_json());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  return from_json(io::read_json(path));
}

}  // namespace picl::corpus
