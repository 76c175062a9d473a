#include "picl/pipeline/config.hpp"

#include <cmath>
#include <sstream>

#include <toml.hpp>

#include "picl/common.hpp"
#include "picl/constructor/constructor.hpp"
#include "picl/io.hpp"
#include "picl/retrieval/retrieval.hpp"

namespace picl::pipeline {

using nlohmann::json;

const json& default_config() {
  static const json d = {
      {"run", {{"dir", "run"}, {"seed", 0}, {"threads", 1}}},
      {"corpus", {{"input", ""}, {"format", "jsonl"}, {"min_merge", 128}, {"max_len", 500}}},
      {"tokenizer", {{"max_vocab", 0}}},
      {"encoder",
       {{"dataset", ""},
        {"templates", ""},
        {"d", 64},
        {"features", 16384},
        {"ngram_min", 3},
        {"ngram_max", 5},
        {"hash_seed", 0},
        {"init_scale", 0.1},
        {"lr", 0.5},
        {"batch", 32},
        {"n_hard", 4},
        {"epochs", 1},
        {"steps", 0},
        {"seed", 1}}},
      {"index", {{"k_c", 0}, {"n_probe", 0}, {"iters", 20}}},
      {"retrieval", {{"strategy", "dense_ivf"}, {"k", 20}}},
      {"constructor",
       {{"budget", 1024},
        {"delta", 0.0},
        {"scorer", "ngram"},
        {"scorer_cmd", ""},
        {"ngram_order", 3},
        {"ngram_lambdas", {0.1, 0.3, 0.6}}}},
      {"pretrain",
       {{"alpha", 0.5},
        {"steps", 10000},
        {"batch", 16},
        {"lr", 0.5},
        {"clip", 5.0},
        {"seed", 1},
        {"context", 12},
        {"embed", 16},
        {"hidden", 64},
        {"summary", false},
        {"init_scale", 0.1}}},
      {"eval",
       {{"tasks", json::array()},
        {"shots", 4},
        {"seeds", {1, 2, 3, 4, 5}},
        {"max_eval", 1000},
        {"max_new_tokens", 32}}},
  };
  return d;
}

std::vector<std::string> valid_keys() {
  std::vector<std::string> out;
  for (const auto& [sec, body] : default_config().items())
    for (const auto& [key, _] : body.items()) out.push_back(sec + "." + key);
  return out;
}

namespace {

std::string key_list() {
  std::string s;
  for (const auto& k : valid_keys()) s += (s.empty() ? "" : ", ") + k;
  return s;
}

std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || !default_config().contains(key.substr(0, dot)) ||
      !default_config()[key.substr(0, dot)].contains(key.substr(dot + 1)))
    throw ConfigError("unknown config key '" + key + "'; valid keys: " + key_list());
  return {key.substr(0, dot), key.substr(dot + 1)};
}

/// Checks `v` against the type of the default and normalises it.
json conform(const std::string& key, const json& def, json v) {
  auto bad = [&](const char* want) {
    return ConfigError("config key '" + key + "' expects " + want + ", got " + v.dump());
  };
  if (def.is_boolean()) {
    if (!v.is_boolean()) throw bad("a boolean");
    return v;
  }
  if (def.is_number_float()) {
    if (v.is_string()) {
      const double x = constructor::parse_delta(v.get<std::string>());
      return std::isinf(x) ? json(constructor::format_delta(x)) : json(x);
    }
    if (!v.is_number()) throw bad("a number");
    return json(v.get<double>());
  }
  if (def.is_number_integer()) {
    if (!v.is_number_integer()) throw bad("an integer");
    return v;
  }
  if (def.is_string()) {
    if (!v.is_string()) throw bad("a string");
    return v;
  }
  if (def.is_array()) {
    if (!v.is_array()) throw bad("an array");
    const json* elem = def.empty() ? nullptr : &def[0];
    for (auto& e : v) {
      if (!elem) {
        if (!e.is_string()) throw bad("an array of strings");
      } else {
        e = conform(key, *elem, e);
      }
    }
    return v;
  }
  throw bad("a known type");
}

json from_toml(const toml::node& n, const std::string& where) {
  if (auto t = n.as_table()) {
    json j = json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = from_toml(v, where + "." + std::string(k.str()));
    return j;
  }
  if (auto a = n.as_array()) {
    json j = json::array();
    for (const auto& v : *a) j.push_back(from_toml(v, where));
    return j;
  }
  if (auto v = n.as_integer()) return v->get();
  if (auto v = n.as_floating_point()) {
    const double x = v->get();
    if (std::isinf(x)) return constructor::format_delta(x);
    if (std::isnan(x)) throw ConfigError("NaN is not a valid value for " + where);
    return x;
  }
  if (auto v = n.as_boolean()) return v->get();
  if (auto v = n.as_string()) return v->get();
  throw ConfigError("unsupported TOML value type at " + where);
}

json parse_scalar(const json& def, std::string_view raw) {
  std::string s(raw);
  if (def.is_boolean()) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    return s;
  }
  if (def.is_number_integer()) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    return s;
  }
  if (def.is_number_float()) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    return s;  // "-inf" and friends are handled by conform
  }
  return s;
}

}  // namespace

Config::Config() : values_(default_config()), base_(std::filesystem::current_path()) {}

Config Config::from_toml_string(std::string_view toml_text, const std::filesystem::path& base_dir,
                                const std::vector<std::string>& overrides) {
  Config c;
  c.base_ = base_dir;
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "invalid TOML: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(msg.str());
  }
  const json j = from_toml(tbl, "config");
  for (const auto& [sec, body] : j.items()) {
    if (!body.is_object()) throw ConfigError("top-level key '" + sec + "' must be a table; valid keys: " + key_list());
    for (const auto& [key, v] : body.items()) {
      const auto full = sec + "." + key;
      split_key(full);
      c.values_[sec][key] = conform(full, default_config()[sec][key], v);
    }
  }
  for (const auto& o : overrides) c.set(o);
  c.validate();
  return c;
}

Config Config::load(const std::filesystem::path& toml_path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(toml_path)) throw ConfigError("config file not found: " + toml_path.string());
  const auto base = std::filesystem::absolute(toml_path).parent_path();
  return from_toml_string(io::read_text(toml_path), base, overrides);
}

void Config::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  set(std::string(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void Config::set(const std::string& key, std::string_view value) {
  const auto [sec, k] = split_key(key);
  const json& def = default_config()[sec][k];
  json v;
  if (def.is_array()) {
    std::string s(value);
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    v = json::array();
    const json elem = def.empty() ? json("") : def[0];
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
      const auto b = item.find_first_not_of(" \t\"'");
      const auto e = item.find_last_not_of(" \t\"'");
      if (b == std::string::npos) continue;
      v.push_back(parse_scalar(elem, item.substr(b, e - b + 1)));
    }
  } else {
    v = parse_scalar(def, value);
  }
  values_[sec][k] = conform(key, def, v);
}

const json& Config::at(const std::string& key) const {
  const auto [sec, k] = split_key(key);
  return values_.at(sec).at(k);
}

std::string Config::str(const std::string& key) const { return at(key).get<std::string>(); }

double Config::real(const std::string& key) const {
  const auto& v = at(key);
  return v.is_string() ? constructor::parse_delta(v.get<std::string>()) : v.get<double>();
}

std::int64_t Config::integer(const std::string& key) const { return at(key).get<std::int64_t>(); }

std::size_t Config::size(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

bool Config::flag(const std::string& key) const { return at(key).get<bool>(); }

std::filesystem::path Config::path(const std::string& key) const {
  std::filesystem::path p = str(key);
  if (p.empty() || p.is_absolute()) return p;
  return base_ / p;
}

std::vector<std::filesystem::path> Config::paths(const std::string& key) const {
  std::vector<std::filesystem::path> out;
  for (const auto& v : at(key)) {
    std::filesystem::path p = v.get<std::string>();
    out.push_back(p.is_absolute() ? p : base_ / p);
  }
  return out;
}

std::string Config::canonical() const {
  json j = values_;
  j["run"].erase("dir");
  j["run"].erase("threads");
  return j.dump();
}

std::string Config::hash() const { return io::sha256_hex(canonical()); }

void Config::validate() const {
  auto positive = [&](const std::string& key) {
    if (integer(key) < 1) throw ConfigError("config key '" + key + "' must be >= 1");
  };
  for (const char* k : {"corpus.max_len", "encoder.d", "encoder.features", "encoder.ngram_min",
                        "encoder.ngram_max", "encoder.batch", "encoder.epochs", "index.iters",
                        "retrieval.k", "constructor.budget", "constructor.ngram_order", "pretrain.batch",
                        "pretrain.context", "pretrain.embed", "pretrain.hidden", "eval.max_eval"})
    positive(k);
  for (const char* k : {"run.seed", "run.threads", "corpus.min_merge", "tokenizer.max_vocab", "encoder.steps",
                        "encoder.n_hard", "encoder.hash_seed", "encoder.seed", "index.k_c", "index.n_probe",
                        "pretrain.steps", "pretrain.seed", "eval.shots", "eval.max_new_tokens"})
    size(k);
  corpus::parse_input_format(str("corpus.format"));
  retrieval::parse_strategy(str("retrieval.strategy"));
  const auto scorer = str("constructor.scorer");
  if (scorer != "ngram" && scorer != "unigram" && scorer != "external" && scorer != "none")
    throw ConfigError("constructor.scorer must be one of ngram, unigram, external, none");
  const double alpha = real("pretrain.alpha");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("pretrain.alpha must be in [0, 1]");
  if (std::isnan(real("constructor.delta"))) throw ConfigError("constructor.delta must not be NaN");
  if (at("constructor.ngram_lambdas").size() != size("constructor.ngram_order"))
    throw ConfigError("constructor.ngram_lambdas needs one weight per n-gram order");
  if (at("eval.seeds").empty()) throw ConfigError("eval.seeds must not be empty");
  if (real("pretrain.lr") <= 0 || real("encoder.lr") < 0) throw ConfigError("learning rates must be positive");
  if (integer("encoder.ngram_min") > integer("encoder.ngram_max"))
    throw ConfigError("encoder.ngram_min must not exceed encoder.ngram_max");
  for (const char* k : {"corpus.input", "encoder.dataset", "encoder.templates"}) {
    const auto p = path(k);
    if (!p.empty() && !std::filesystem::exists(p))
      throw ConfigError("config key '" + std::string(k) + "': no such file " + p.string());
  }
  for (const auto& p : paths("eval.tasks"))
    if (!std::filesystem::exists(p)) throw ConfigError("config key 'eval.tasks': no such path " + p.string());
}

}  // namespace picl::pipeline
