#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "picl/common.hpp"
#include "picl/io.hpp"
#include "picl/pipeline/stages.hpp"
#include "picl/synth/world.hpp"

namespace {

using namespace picl;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kDependency = 3;
constexpr int kFailure = 4;

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string synth_config(const synth::WorldSpec& spec) {
  std::ostringstream t;
  t << "[run]\ndir = \"run\"\nseed = " << spec.seed << "\n\n"
    << "[corpus]\ninput = \"docs.jsonl\"\nmin_merge = 12\n\n"
    << "[encoder]\ndataset = \"encoder.jsonl\"\ntemplates = \"templates.json\"\nsteps = 300\n\n"
    << "[retrieval]\nstrategy = \"dense_ivf\"\nk = 20\n\n"
    << "[constructor]\ndelta = \"-inf\"\n\n"
    << "[eval]\ntasks = [\"tasks\"]\nseeds = [1, 2, 3]\nmax_eval = 100\n";
  return t.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"picl: retrieval-based pretraining corpus builder"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> sets;
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker threads (overrides run.threads)");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "TOML config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override a key, e.g. --set retrieval.k=10")->take_all();
  };

  bool with_deps = false;
  std::vector<std::pair<CLI::App*, pipeline::Stage>> stage_cmds;
  for (pipeline::Stage s : pipeline::all_stages()) {
    auto* sub = app.add_subcommand(std::string(pipeline::stage_name(s)), "run the " +
                                                                            std::string(pipeline::stage_name(s)) +
                                                                            " stage");
    add_common(sub);
    sub->add_flag("--with-deps", with_deps, "run missing upstream stages first");
    stage_cmds.emplace_back(sub, s);
  }

  auto* all = app.add_subcommand("all", "run every stage that is missing");
  add_common(all);

  auto* sweep = app.add_subcommand("sweep", "re-run downstream stages for each value of one parameter");
  add_common(sweep);
  std::string param, values;
  sweep->add_option("--param", param, "delta, alpha, strategy, k, budget, shots or a dotted key")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();

  auto* rep = app.add_subcommand("report", "summarise every run under a directory");
  std::string report_dir;
  rep->add_option("dir", report_dir, "run directory")->required();

  auto* syn = app.add_subcommand("synth", "write the synthetic task world and a config for it");
  std::string out_dir;
  synth::WorldSpec spec;
  syn->add_option("--out", out_dir, "output directory")->required();
  syn->add_option("--seed", spec.seed, "world seed");
  syn->add_option("--paragraphs", spec.n_paragraphs, "corpus size in paragraphs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (syn->parsed()) {
      synth::World world(spec);
      synth::write_world(world, out_dir);
      io::write_text(fs::path(out_dir) / "config.toml", synth_config(spec));
      std::cout << "wrote " << out_dir << "/config.toml\n";
      return kOk;
    }
    if (rep->parsed()) {
      std::cout << pipeline::report(report_dir).markdown;
      return kOk;
    }
    const auto cfg = pipeline::Config::load(config_path, sets);
    if (sweep->parsed()) {
      std::cout << pipeline::sweep(cfg, param, split_values(values), threads).string() << '\n';
      return kOk;
    }
    pipeline::Run run(cfg, threads);
    if (all->parsed()) {
      run.ensure(pipeline::Stage::eval);
      run.ensure(pipeline::Stage::compare);
      return kOk;
    }
    for (const auto& [sub, s] : stage_cmds) {
      if (!sub->parsed()) continue;
      if (with_deps)
        for (pipeline::Stage d : run.dependencies(s)) run.ensure(d);
      run.run(s);
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const StageDependencyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDependency;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
