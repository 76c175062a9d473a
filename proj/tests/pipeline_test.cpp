#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "picl/pipeline/stages.hpp"
#include "picl/synth/world.hpp"
#include "test_util.hpp"

using namespace picl;
using namespace picl::pipeline;
using picl::testing::TempDir;
namespace fs = std::filesystem;

namespace {

// A small world and a config sized for seconds, not minutes.
Config small_config(const TempDir& tmp, const std::string& run = "run") {
  synth::WorldSpec ws;
  ws.n_paragraphs = 300;
  ws.encoder_examples_per_task = 20;
  ws.eval_per_task = 10;
  ws.n_tasks = 4;
  synth::write_world(synth::World(ws), tmp.path());
  const std::string toml = R"(
[run]
dir = ")" + run + R"("
[corpus]
input = "docs.jsonl"
min_merge = 12
[encoder]
dataset = "encoder.jsonl"
templates = "templates.json"
d = 16
features = 2048
steps = 40
[retrieval]
k = 5
[pretrain]
steps = 40
hidden = 16
[eval]
tasks = ["tasks"]
seeds = [1, 2]
max_eval = 5
)";
  return Config::from_toml_string(toml, tmp.path());
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(PICL_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config defaults, overrides and types") {
  Config c;
  CHECK(c.str("retrieval.strategy") == "dense_ivf");
  CHECK(c.size("retrieval.k") == 20);
  c.set("retrieval.k=7");
  CHECK(c.size("retrieval.k") == 7);
  c.set("constructor.delta=-inf");
  CHECK(std::isinf(c.real("constructor.delta")));
  CHECK(c.real("constructor.delta") < 0);
  c.set("eval.seeds=1,2,3");
  CHECK(c.at("eval.seeds").size() == 3);
  CHECK_THROWS_AS(c.set("retrieval.k=abc"), ConfigError);
  CHECK_THROWS_AS(c.set("retrieval.k"), ConfigError);
}

TEST_CASE("unknown keys list every valid key") {
  Config c;
  try {
    c.set("retrieval.kk=3");
    FAIL("no error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("retrieval.kk") != std::string::npos);
    for (const auto& k : valid_keys()) CHECK(msg.find(k) != std::string::npos);
  }
  CHECK_THROWS_AS(Config::from_toml_string("[retrieval]\nkk = 3\n", "."), ConfigError);
  CHECK_THROWS_AS(Config::from_toml_string("[nope]\nk = 3\n", "."), ConfigError);
  CHECK_THROWS_AS(Config::from_toml_string("[retrieval\n", "."), ConfigError);
}

TEST_CASE("config hash ignores key order, run dir and threads") {
  const auto a = Config::from_toml_string("[retrieval]\nk = 5\nstrategy = \"bm25\"\n[run]\nseed = 2\n", ".");
  const auto b = Config::from_toml_string("[run]\nseed = 2\n[retrieval]\nstrategy = \"bm25\"\nk = 5\n", ".");
  CHECK(a.hash() == b.hash());
  auto c = a;
  c.set("run.dir=elsewhere");
  c.set("run.threads=4");
  CHECK(c.hash() == a.hash());
  c.set("retrieval.k=6");
  CHECK(c.hash() != a.hash());
  auto d = a;
  d.set("constructor.delta=-inf");
  CHECK(d.hash() != a.hash());
  CHECK(d.canonical().find("\"-inf\"") != std::string::npos);
}

TEST_CASE("validation rejects bad values") {
  Config c;
  c.set("retrieval.strategy=nearest");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Config d;
  d.set("pretrain.alpha=1.5");
  CHECK_THROWS_AS(d.validate(), ConfigError);
  Config e;
  e.set("corpus.input=/nonexistent/docs.jsonl");
  CHECK_THROWS_AS(e.validate(), ConfigError);
}

TEST_CASE("stage names and sweep parameters") {
  for (Stage s : all_stages()) CHECK(parse_stage(stage_name(s)) == s);
  CHECK(!parse_stage("nope"));
  CHECK(resolve_sweep_param("delta") == "constructor.delta");
  CHECK(resolve_sweep_param("pretrain.lr") == "pretrain.lr");
  CHECK_THROWS_AS(resolve_sweep_param("gamma"), ConfigError);
  CHECK(stage_for_key("constructor.delta") == Stage::filter);
  CHECK(stage_for_key("constructor.budget") == Stage::construct);
  CHECK(stage_for_key("eval.shots") == Stage::eval);
}

TEST_CASE("stages refuse to run before their inputs exist") {
  TempDir tmp;
  Run run(small_config(tmp));
  try {
    run.run(Stage::construct);
    FAIL("no error");
  } catch (const StageDependencyError& e) {
    CHECK(e.required_stage() == "build-corpus");
    CHECK(std::string(e.what()).find("construct") != std::string::npos);
  }
  run.run(Stage::build_corpus);
  run.run(Stage::train_encoder);
  run.run(Stage::embed);
  try {
    run.run(Stage::retrieve);  // dense_ivf needs the index
    FAIL("no error");
  } catch (const StageDependencyError& e) {
    CHECK(e.required_stage() == "build-index");
  }
  auto cfg = run.config();
  cfg.set("retrieval.strategy=dense_exact");
  Run exact(cfg);
  CHECK_NOTHROW(exact.run(Stage::retrieve));
}

TEST_CASE("full pipeline is reproducible and thread invariant") {
  TempDir tmp;
  auto a_cfg = small_config(tmp, "a");
  Run a(a_cfg, 1);
  a.ensure(Stage::eval);
  a.ensure(Stage::compare);
  auto b_cfg = small_config(tmp, "b");
  Run b(b_cfg, 3);
  b.ensure(Stage::eval);
  b.ensure(Stage::compare);
  const auto ha = artifact_hashes(tmp / "a");
  CHECK(ha.size() >= 15);
  CHECK(ha == artifact_hashes(tmp / "b"));
  for (Stage s : all_stages()) CHECK(a.manifest(s).config_hash == a_cfg.hash());

  const auto ev = a.manifest(Stage::eval).counts;
  CHECK(ev["accuracy_per_seed"].size() == 2);
  CHECK(ev["accuracy_mean"].get<double>() >= 0.0);
  CHECK(ev["accuracy_mean"].get<double>() <= 1.0);
  CHECK(a.manifest(Stage::retrieve).counts.contains("purity"));
  CHECK(fs::exists(tmp / "a" / "run_manifest.json"));

  const auto rep = report(tmp.path());
  std::istringstream lines(rep.csv);
  std::vector<std::string> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(l);
  REQUIRE(rows.size() == 3);  // header, a, b
  CHECK(rows[0].rfind("run,config_hash,strategy,k,", 0) == 0);
  CHECK(rows[1].rfind("a,", 0) == 0);
  CHECK(rows[2].rfind("b,", 0) == 0);
  CHECK(rows[1].substr(2) == rows[2].substr(2));
  CHECK(rep.markdown.find("| a |") != std::string::npos);
  CHECK(report(tmp / "a").csv.find("\na,") != std::string::npos);  // single run, one row
  CHECK(fs::exists(tmp / "report.md"));
}

TEST_CASE("sweep reuses upstream artifacts") {
  TempDir tmp;
  auto cfg = small_config(tmp);
  cfg.set("constructor.delta=-inf");
  const auto csv = sweep(cfg, "delta", {"-inf", "0"});
  const std::string text = io::read_text(csv);
  CHECK(text.rfind("param,value,purity,retained_fraction,mean_demos_per_instance,accuracy_mean,accuracy_std\n", 0) == 0);
  CHECK(text.find("constructor.delta,-inf,") != std::string::npos);
  CHECK(text.find("constructor.delta,0,") != std::string::npos);
  const auto base = artifact_hashes(tmp / "run");
  const auto sub = artifact_hashes(tmp / "run" / "sweep" / "constructor.delta" / "0");
  CHECK(base.at("construct/candidates") == sub.at("construct/candidates"));
  CHECK(base.count("filter/instances") == 0);
  // the -inf sub-run keeps every candidate
  Config inf_cfg = cfg;
  inf_cfg.set("run.dir", (tmp / "run" / "sweep" / "constructor.delta" / "-inf").string());
  CHECK(Run(inf_cfg).manifest(Stage::filter).counts["retained_fraction"] == 1.0);
}

TEST_CASE("corrupted manifests are reported with their path") {
  TempDir tmp;
  Run run(small_config(tmp));
  run.run(Stage::build_corpus);
  const auto p = tmp / "run" / "manifests" / "build-corpus.json";
  io::write_text(p, "{\"stage\": ");
  try {
    (void)run.manifest(Stage::build_corpus);
    FAIL("no error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
  }
  io::write_text(tmp / "run" / "run_manifest.json", "[1, 2");
  CHECK_THROWS_AS(report(tmp / "run"), FormatError);
  TempDir empty;
  CHECK_THROWS_AS(report(empty.path()), ConfigError);
}

TEST_CASE("command line exit codes") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + tmp.path().string() + " --paragraphs 200") == 0);
  const auto cfg = (tmp / "config.toml").string();
  CHECK(fs::exists(tmp / "tasks"));
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("retrieve -c " + cfg + " --set retrieval.kk=3") == 2);
  CHECK(run_cli("construct -c " + cfg) == 3);
  CHECK(run_cli("build-corpus -c " + cfg + " --set corpus.input=missing.jsonl") == 2);
  tmp.write("broken.jsonl", "{\"id\": \"a\", \"text\": \"x\"}\nnot json\n");
  CHECK(run_cli("build-corpus -c " + cfg + " --set corpus.input=broken.jsonl") == 4);
  CHECK(run_cli("build-corpus -c " + cfg) == 0);
  CHECK(fs::exists(tmp / "run" / "manifests" / "build-corpus.json"));
  CHECK(run_cli("report " + (tmp / "run").string()) == 0);
}
