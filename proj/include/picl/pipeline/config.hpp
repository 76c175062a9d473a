#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace picl::pipeline {

/// Every recognised key with its default value. Sections mirror the
/// pipeline stages.
const nlohmann::json& default_config();

/// Dotted names of every valid key, sorted.
std::vector<std::string> valid_keys();

/// Pipeline configuration: the defaults overlaid with a TOML file and
/// dotted-key overrides. Relative paths resolve against base_dir.
class Config {
 public:
  Config();
  static Config load(const std::filesystem::path& toml_path,
                     const std::vector<std::string>& overrides = {});
  static Config from_toml_string(std::string_view toml, const std::filesystem::path& base_dir,
                                 const std::vector<std::string>& overrides = {});

  /// "section.key=value"; the value is parsed to the key's type.
  void set(std::string_view assignment);
  void set(const std::string& key, std::string_view value);

  const nlohmann::json& values() const { return values_; }
  const std::filesystem::path& base_dir() const { return base_; }

  const nlohmann::json& at(const std::string& key) const;
  std::string str(const std::string& key) const;
  double real(const std::string& key) const;  // also accepts "-inf"/"inf"
  std::int64_t integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;  // non-negative integer
  bool flag(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;
  std::vector<std::filesystem::path> paths(const std::string& key) const;

  /// Sorted-key JSON of the semantic fields (run.dir and run.threads are
  /// excluded: neither changes any artifact).
  std::string canonical() const;
  /// SHA-256 of canonical().
  std::string hash() const;

  void validate() const;

 private:
  nlohmann::json values_;
  std::filesystem::path base_;
};

}  // namespace picl::pipeline
