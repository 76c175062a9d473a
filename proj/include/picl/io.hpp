#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "picl/common.hpp"

namespace picl::io {

static_assert(std::endian::native == std::endian::little,
              "binary artifact formats assume a little-endian host");

/// Sequential little-endian writer over an output file.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void magic(std::string_view tag);  // exactly 8 bytes
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()));
  }
  void put_string(std::string_view s);  // u32 length + bytes
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Sequential little-endian reader; every short read raises FormatError.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  void expect_magic(std::string_view tag);
  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v;
    read_raw(&v, sizeof(T));
    return v;
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(std::span<T> out) {
    read_raw(out.data(), out.size_bytes());
  }
  std::string get_string();
  bool at_end();
  const std::filesystem::path& path() const { return path_; }

 private:
  void read_raw(void* dst, std::size_t n);
  std::filesystem::path path_;
  std::ifstream in_;
};

/// Calls fn(line_number, json) for each non-blank line; line numbers are
/// 1-based. Parse failures raise FormatError naming the file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Hex SHA-256 of a byte string or of a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace picl::io
