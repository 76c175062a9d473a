#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "picl/lm/scorer.hpp"
#include "picl/pipeline/config.hpp"

namespace picl::pipeline {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class Stage {
  build_corpus,
  train_encoder,
  embed,
  build_index,
  retrieve,
  construct,
  filter,
  pretrain,
  eval,
  compare,
};

/// Every stage in execution order.
const std::vector<Stage>& all_stages();
std::string_view stage_name(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

struct Artifact {
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct StageManifest {
  std::string stage;
  std::string config_hash;
  std::string tool_version;
  std::map<std::string, Artifact> artifacts;
  nlohmann::json counts = nlohmann::json::object();
  double wall_clock_s = 0.0;
  std::string finished_at;

  nlohmann::json to_json() const;
  static StageManifest from_json(const nlohmann::json& j);
};

/// One pipeline run rooted at config run.dir. Each stage writes its
/// artifacts plus manifests/<stage>.json, and refreshes run_manifest.json.
class Run {
 public:
  explicit Run(Config config, unsigned threads = 0);  // 0 means run.threads

  const Config& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

  /// Direct upstream stages under the current config.
  std::vector<Stage> dependencies(Stage s) const;
  bool has(Stage s) const;
  /// Throws StageDependencyError naming the earliest missing upstream stage.
  void check_dependencies(Stage s) const;
  StageManifest manifest(Stage s) const;

  /// Runs one stage; upstream stages must already be complete.
  void run(Stage s);
  /// Runs whatever is missing upstream of `s`, then `s` when missing.
  void ensure(Stage s);

 private:
  struct Output {
    std::vector<std::pair<std::string, std::string>> artifacts;  // name -> relative path
    nlohmann::json counts = nlohmann::json::object();
  };

  std::filesystem::path artifact(Stage s, const std::string& name) const;
  void finish(Stage s, const Output& out, double seconds);
  lm::ScorerFactory reference_scorer(bool for_compare);
  void write_run_manifest() const;

  Output build_corpus();
  Output train_encoder();
  Output embed();
  Output build_index();
  Output retrieve();
  Output construct();
  Output filter();
  Output pretrain();
  Output eval();
  Output compare();

  Config cfg_;
  std::filesystem::path dir_;
  unsigned threads_;
};

/// First stage whose output depends on `key`.
Stage stage_for_key(const std::string& key);
/// Short names accepted by sweep: delta, alpha, strategy, k, budget, shots.
std::string resolve_sweep_param(const std::string& param);

struct SweepRow {
  std::string value;
  std::string run_dir;
  nlohmann::json metrics;
};

/// Runs one sub-run per value under <run>/sweep/<key>/<value>, reusing the
/// base run's artifacts upstream of the swept stage, and writes
/// <run>/sweep_<key>.csv. Returns the CSV path.
std::filesystem::path sweep(const Config& base, const std::string& param,
                            const std::vector<std::string>& values, unsigned threads = 0);

/// Summary of every run found under `dir` (the run itself and sweep
/// sub-runs) as Markdown and CSV, written to report.md and report.csv.
struct Report {
  std::string markdown;
  std::string csv;
};
Report report(const std::filesystem::path& dir);

/// Hashes of every artifact of every completed stage, keyed by
/// "<stage>/<name>".
std::map<std::string, std::string> artifact_hashes(const std::filesystem::path& run_dir);

}  // namespace picl::pipeline
