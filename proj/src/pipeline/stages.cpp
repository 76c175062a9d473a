#include "picl/pipeline/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "picl/constructor/constructor.hpp"
#include "picl/corpus/corpus.hpp"
#include "picl/encoder/contrastive.hpp"
#include "picl/eval/eval.hpp"
#include "picl/io.hpp"
#include "picl/lm/external.hpp"
#include "picl/lm/neural.hpp"
#include "picl/lm/ngram.hpp"
#include "picl/retrieval/retrieval.hpp"
#include "picl/vecindex/vecindex.hpp"

namespace picl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s = {Stage::build_corpus, Stage::train_encoder, Stage::embed,
                                       Stage::build_index,  Stage::retrieve,      Stage::construct,
                                       Stage::filter,       Stage::pretrain,      Stage::eval,
                                       Stage::compare};
  return s;
}

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::build_corpus: return "build-corpus";
    case Stage::train_encoder: return "train-encoder";
    case Stage::embed: return "embed";
    case Stage::build_index: return "build-index";
    case Stage::retrieve: return "retrieve";
    case Stage::construct: return "construct";
    case Stage::filter: return "filter";
    case Stage::pretrain: return "pretrain";
    case Stage::eval: return "eval";
    case Stage::compare: return "compare";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (auto st : all_stages())
    if (stage_name(st) == s) return st;
  return std::nullopt;
}

json StageManifest::to_json() const {
  json a = json::object();
  for (const auto& [name, art] : artifacts) a[name] = {{"path", art.path}, {"sha256", art.sha256}};
  return {{"stage", stage},         {"config_hash", config_hash}, {"tool_version", tool_version},
          {"artifacts", a},         {"counts", counts},           {"wall_clock_s", wall_clock_s},
          {"finished_at", finished_at}};
}

StageManifest StageManifest::from_json(const json& j) {
  StageManifest m;
  m.stage = j.at("stage");
  m.config_hash = j.at("config_hash");
  m.tool_version = j.at("tool_version");
  for (const auto& [name, a] : j.at("artifacts").items()) m.artifacts[name] = {a.at("path"), a.at("sha256")};
  m.counts = j.at("counts");
  m.wall_clock_s = j.at("wall_clock_s");
  m.finished_at = j.at("finished_at");
  return m;
}

namespace {

fs::path manifest_path(const fs::path& dir, Stage s) {
  return dir / "manifests" / (std::string(stage_name(s)) + ".json");
}

StageManifest read_manifest(const fs::path& path) {
  try {
    return StageManifest::from_json(io::read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupted manifest: " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": corrupted manifest: " + e.what());
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void log(Stage s, const std::string& msg) { std::cerr << "[" << stage_name(s) << "] " << msg << '\n'; }

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<std::string> load_documents(const fs::path& path) {
  std::vector<std::string> out;
  io::for_each_jsonl(path, [&](std::size_t, const json& j) { out.push_back(j.at("text").get<std::string>()); });
  return out;
}

std::vector<fs::path> expand_tasks(const std::vector<fs::path>& entries) {
  std::vector<fs::path> out;
  for (const auto& e : entries) {
    if (fs::is_directory(e)) {
      std::vector<fs::path> found;
      for (const auto& f : fs::directory_iterator(e))
        if (f.path().extension() == ".json") found.push_back(f.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      if (!fs::exists(e)) throw ConfigError("task file not found: " + e.string());
      out.push_back(e);
    }
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Run::Run(Config config, unsigned threads) : cfg_(std::move(config)) {
  cfg_.validate();
  dir_ = cfg_.path("run.dir");
  if (dir_.empty()) throw ConfigError("run.dir must be set");
  threads_ = threads ? threads : static_cast<unsigned>(std::max<std::size_t>(1, cfg_.size("run.threads")));
}

std::vector<Stage> Run::dependencies(Stage s) const {
  switch (s) {
    case Stage::build_corpus:
    case Stage::train_encoder: return {};
    case Stage::embed: return {Stage::build_corpus, Stage::train_encoder};
    case Stage::build_index: return {Stage::embed};
    case Stage::retrieve: {
      switch (retrieval::parse_strategy(cfg_.str("retrieval.strategy"))) {
        case retrieval::Strategy::dense_exact: return {Stage::build_corpus, Stage::train_encoder, Stage::embed};
        case retrieval::Strategy::dense_ivf: return {Stage::build_corpus, Stage::train_encoder, Stage::build_index};
        default: return {Stage::build_corpus};
      }
    }
    case Stage::construct: return {Stage::retrieve};
    case Stage::filter: return {Stage::construct};
    case Stage::pretrain: return {Stage::build_corpus, Stage::filter};
    case Stage::eval: return {Stage::pretrain};
    case Stage::compare: return {Stage::filter};
  }
  return {};
}

bool Run::has(Stage s) const { return fs::exists(manifest_path(dir_, s)); }

void Run::check_dependencies(Stage s) const {
  std::set<Stage> closure;
  std::vector<Stage> todo = dependencies(s);
  while (!todo.empty()) {
    const Stage d = todo.back();
    todo.pop_back();
    if (!closure.insert(d).second) continue;
    for (Stage u : dependencies(d)) todo.push_back(u);
  }
  std::vector<std::string> missing;
  std::optional<Stage> first;
  for (Stage st : all_stages())
    if (closure.contains(st) && !has(st)) {
      if (!first) first = st;
      missing.emplace_back(stage_name(st));
    }
  if (!first) return;
  std::string list;
  for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
  throw StageDependencyError(std::string(stage_name(*first)),
                             "stage '" + std::string(stage_name(s)) + "' needs '" +
                                 std::string(stage_name(*first)) + "' to run first (missing: " + list + ")");
}

StageManifest Run::manifest(Stage s) const {
  const auto p = manifest_path(dir_, s);
  if (!fs::exists(p))
    throw StageDependencyError(std::string(stage_name(s)),
                               "stage '" + std::string(stage_name(s)) + "' has not been run in " + dir_.string());
  return read_manifest(p);
}

fs::path Run::artifact(Stage s, const std::string& name) const {
  const auto m = manifest(s);
  const auto it = m.artifacts.find(name);
  if (it == m.artifacts.end())
    throw FormatError(manifest_path(dir_, s).string() + ": no artifact named '" + name + "'");
  const auto p = dir_ / it->second.path;
  if (!fs::exists(p))
    throw StageDependencyError(std::string(stage_name(s)), "artifact " + p.string() + " listed by stage '" +
                                                               std::string(stage_name(s)) + "' is missing");
  return p;
}

void Run::finish(Stage s, const Output& out, double seconds) {
  StageManifest m;
  m.stage = stage_name(s);
  m.config_hash = cfg_.hash();
  m.tool_version = kToolVersion;
  for (const auto& [name, rel] : out.artifacts) m.artifacts[name] = {rel, io::sha256_file(dir_ / rel)};
  m.counts = out.counts;
  m.wall_clock_s = seconds;
  m.finished_at = utc_now();
  io::write_json(manifest_path(dir_, s), m.to_json());
  write_run_manifest();
}

void Run::write_run_manifest() const {
  json stages = json::object();
  for (Stage s : all_stages()) {
    if (!has(s)) continue;
    const auto m = read_manifest(manifest_path(dir_, s));
    json arts = json::object();
    for (const auto& [name, a] : m.artifacts) arts[name] = a.path;
    stages[m.stage] = {{"wall_clock_s", m.wall_clock_s}, {"counts", m.counts}, {"artifacts", arts}};
  }
  io::write_json(dir_ / "run_manifest.json",
                 {{"config_hash", cfg_.hash()}, {"tool_version", kToolVersion}, {"stages", stages}});
  json c = cfg_.values();
  io::write_json(dir_ / "config.json", {{"hash", cfg_.hash()}, {"values", c}});
}

void Run::run(Stage s) {
  check_dependencies(s);
  fs::create_directories(dir_ / "manifests");
  const auto t0 = std::chrono::steady_clock::now();
  log(s, "start");
  Output out;
  switch (s) {
    case Stage::build_corpus: out = build_corpus(); break;
    case Stage::train_encoder: out = train_encoder(); break;
    case Stage::embed: out = embed(); break;
    case Stage::build_index: out = build_index(); break;
    case Stage::retrieve: out = retrieve(); break;
    case Stage::construct: out = construct(); break;
    case Stage::filter: out = filter(); break;
    case Stage::pretrain: out = pretrain(); break;
    case Stage::eval: out = eval(); break;
    case Stage::compare: out = compare(); break;
  }
  const double secs = seconds_since(t0);
  finish(s, out, secs);
  std::ostringstream msg;
  msg.precision(3);
  msg << "done in " << secs << " s " << out.counts.dump();
  log(s, msg.str());
}

void Run::ensure(Stage s) {
  for (Stage d : dependencies(s)) ensure(d);
  if (!has(s)) run(s);
}

// ---- stages ----

Run::Output Run::build_corpus() {
  const auto input = cfg_.path("corpus.input");
  if (input.empty()) throw ConfigError("corpus.input must be set");
  corpus::IngestStats ist;
  const auto docs = corpus::ingest_all(input, corpus::parse_input_format(cfg_.str("corpus.format")), &ist);
  corpus::SplitOptions so;
  so.min_merge = cfg_.size("corpus.min_merge");
  so.max_len = cfg_.size("corpus.max_len");
  auto built = corpus::build_store(docs, so, threads_);
  if (built.store.empty()) throw FormatError(input.string() + ": no paragraphs survived splitting");

  built.store.save_jsonl(dir_ / "paragraphs.jsonl");
  std::vector<json> rows;
  rows.reserve(docs.size());
  for (const auto& d : docs) rows.push_back({{"id", d.id}, {"text", d.text}});
  write_lines(dir_ / "documents.jsonl", rows);
  io::write_json(dir_ / "doc_tasks.json", built.doc_tasks);

  std::vector<std::string> texts;
  texts.reserve(built.store.size());
  for (const auto& p : built.store.paragraphs()) texts.push_back(p.text);
  corpus::Tokenizer::build(texts, cfg_.size("tokenizer.max_vocab")).save(dir_ / "tokenizer.json");

  auto stats = corpus::corpus_stats(built.store, built.dropped_overlong);
  stats.skipped_empty_docs = ist.skipped_empty;
  stats.n_docs = built.n_docs;
  io::write_json(dir_ / "corpus_stats.json", stats.to_json());

  Output o;
  o.artifacts = {{"paragraphs", "paragraphs.jsonl"},
                 {"documents", "documents.jsonl"},
                 {"doc_tasks", "doc_tasks.json"},
                 {"tokenizer", "tokenizer.json"},
                 {"stats", "corpus_stats.json"}};
  o.counts = {{"n_docs", built.n_docs},
              {"n_paragraphs", built.store.size()},
              {"dropped_overlong", built.dropped_overlong},
              {"skipped_empty", ist.skipped_empty}};
  return o;
}

Run::Output Run::train_encoder() {
  const auto ds = cfg_.path("encoder.dataset");
  const auto tp = cfg_.path("encoder.templates");
  if (ds.empty() || tp.empty()) throw ConfigError("encoder.dataset and encoder.templates must be set");
  encoder::EncoderTrainConfig ec;
  ec.d = static_cast<std::uint32_t>(cfg_.size("encoder.d"));
  ec.hash.dim = static_cast<std::uint32_t>(cfg_.size("encoder.features"));
  ec.hash.ngram_min = static_cast<std::uint32_t>(cfg_.size("encoder.ngram_min"));
  ec.hash.ngram_max = static_cast<std::uint32_t>(cfg_.size("encoder.ngram_max"));
  ec.hash.seed = cfg_.size("encoder.hash_seed");
  ec.init_scale = cfg_.real("encoder.init_scale");
  ec.lr = cfg_.real("encoder.lr");
  ec.batch = static_cast<std::uint32_t>(cfg_.size("encoder.batch"));
  ec.n_hard = static_cast<std::uint32_t>(cfg_.size("encoder.n_hard"));
  ec.epochs = static_cast<std::uint32_t>(cfg_.size("encoder.epochs"));
  ec.steps = static_cast<std::uint32_t>(cfg_.size("encoder.steps"));
  ec.seed = cfg_.size("encoder.seed");
  const auto res = encoder::train_encoder(encoder::load_task_dataset(ds), encoder::load_templates(tp), ec);
  res.model.save(dir_ / "encoder.bin");
  std::ostringstream csv;
  csv.precision(17);
  csv << "step,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) csv << i << ',' << res.losses[i] << '\n';
  io::write_text(dir_ / "encoder_losses.csv", csv.str());
  Output o;
  o.artifacts = {{"encoder", "encoder.bin"}, {"losses", "encoder_losses.csv"}};
  o.counts = {{"steps", res.losses.size()},
              {"first_loss", res.losses.empty() ? 0.0 : res.losses.front()},
              {"last_loss", res.losses.empty() ? 0.0 : res.losses.back()}};
  return o;
}

Run::Output Run::embed() {
  const auto store = corpus::ParagraphStore::load_jsonl(artifact(Stage::build_corpus, "paragraphs"));
  const auto enc = encoder::EncoderModel::load(artifact(Stage::train_encoder, "encoder"));
  std::vector<std::string> texts;
  vecindex::EmbeddingMatrix m;
  m.d = enc.dim();
  for (const auto& p : store.paragraphs()) {
    texts.push_back(p.text);
    m.ids.push_back(p.id);
  }
  m.data = enc.embed_batch(texts, threads_);
  const auto path = dir_ / "embeddings.bin";
  m.save(path);
  Output o;
  o.artifacts = {{"embeddings", "embeddings.bin"},
                 {"ids", vecindex::EmbeddingMatrix::ids_sidecar(path).filename().string()}};
  o.counts = {{"n", m.n()}, {"d", m.d}};
  return o;
}

Run::Output Run::build_index() {
  const auto m = vecindex::EmbeddingMatrix::load(artifact(Stage::embed, "embeddings"));
  std::size_t k_c = cfg_.size("index.k_c");
  if (k_c == 0) k_c = vecindex::default_k_c(m.n());
  const auto ivf = vecindex::build_ivf(m, k_c, cfg_.size("index.iters"), cfg_.size("run.seed"), threads_);
  ivf.save(dir_ / "index.ivf");
  std::size_t largest = 0;
  for (const auto& l : ivf.lists) largest = std::max(largest, l.ids.size());
  Output o;
  o.artifacts = {{"index", "index.ivf"}};
  o.counts = {{"k_c", ivf.k_c()}, {"n", ivf.size()}, {"largest_list", largest}};
  return o;
}

Run::Output Run::retrieve() {
  const auto strategy = retrieval::parse_strategy(cfg_.str("retrieval.strategy"));
  const auto store = corpus::ParagraphStore::load_jsonl(artifact(Stage::build_corpus, "paragraphs"));
  retrieval::Resources res;
  res.store = &store;
  res.seed = cfg_.size("run.seed");
  std::optional<encoder::EncoderModel> enc;
  std::optional<vecindex::ExactIndex> exact;
  std::optional<vecindex::IvfIndex> ivf;
  std::optional<retrieval::Bm25Index> bm25;
  Output o;
  switch (strategy) {
    case retrieval::Strategy::dense_exact:
      enc = encoder::EncoderModel::load(artifact(Stage::train_encoder, "encoder"));
      exact = vecindex::build_exact(vecindex::EmbeddingMatrix::load(artifact(Stage::embed, "embeddings")));
      res.encoder = &*enc;
      res.exact = &*exact;
      break;
    case retrieval::Strategy::dense_ivf: {
      enc = encoder::EncoderModel::load(artifact(Stage::train_encoder, "encoder"));
      ivf = vecindex::IvfIndex::load(artifact(Stage::build_index, "index"));
      res.encoder = &*enc;
      res.ivf = &*ivf;
      const std::size_t np = cfg_.size("index.n_probe");
      res.n_probe = np ? np : vecindex::default_n_probe(ivf->k_c());
      o.counts["n_probe"] = res.n_probe;
      break;
    }
    case retrieval::Strategy::bm25:
      bm25 = retrieval::Bm25Index::build(store);
      bm25->save(dir_ / "bm25.bin");
      res.bm25 = &*bm25;
      o.artifacts.emplace_back("bm25", "bm25.bin");
      break;
    case retrieval::Strategy::random: break;
  }
  const auto results = retrieval::retrieve_all(strategy, cfg_.size("retrieval.k"), res, threads_);
  retrieval::save_retrieval_jsonl(dir_ / "retrieval.jsonl", results);
  o.artifacts.emplace_back("results", "retrieval.jsonl");
  o.counts["n_queries"] = results.size();
  o.counts["strategy"] = std::string(retrieval::to_string(strategy));

  const auto doc_tasks =
      io::read_json(artifact(Stage::build_corpus, "doc_tasks")).get<std::map<std::string, std::string>>();
  if (!doc_tasks.empty()) {
    const auto ps = retrieval::task_purity(results, retrieval::paragraph_tasks(store, doc_tasks));
    o.counts["purity"] = ps.mean;
    o.counts["purity_queries"] = ps.n_queries;
  }
  return o;
}

lm::ScorerFactory Run::reference_scorer(bool for_compare) {
  const std::string kind = cfg_.str("constructor.scorer");
  if (kind == "none" && !for_compare) return nullptr;
  auto tok = corpus::Tokenizer::load(artifact(Stage::build_corpus, "tokenizer"));
  if (kind == "external" && !for_compare) {
    std::string cmd = cfg_.str("constructor.scorer_cmd");
    if (const char* env = std::getenv("PICL_SCORER_CMD"); env && *env) cmd = env;
    if (cmd.empty()) throw ConfigError("constructor.scorer = external needs constructor.scorer_cmd or PICL_SCORER_CMD");
    auto argv = lm::ExternalScorer::split_command(cmd);
    return [argv] {
      lm::ExternalScorerOptions opt;
      opt.argv = argv;
      return std::make_unique<lm::ExternalScorer>(opt);
    };
  }
  const auto docs = load_documents(artifact(Stage::build_corpus, "documents"));
  if (kind == "unigram") {
    auto uni = std::make_shared<lm::UnigramScorer>(std::move(tok), docs);
    return [uni] { return std::make_unique<lm::UnigramScorer>(*uni); };
  }
  const auto lambdas = cfg_.at("constructor.ngram_lambdas").get<std::vector<double>>();
  auto ng = std::make_shared<lm::NGramLm>(
      lm::NGramLm::train(std::move(tok), docs, cfg_.size("constructor.ngram_order"), lambdas));
  return [ng] { return std::make_unique<lm::NGramLm>(*ng); };
}

Run::Output Run::construct() {
  const auto store = corpus::ParagraphStore::load_jsonl(artifact(Stage::build_corpus, "paragraphs"));
  const auto results = retrieval::load_retrieval_jsonl(artifact(Stage::retrieve, "results"));
  const double delta = cfg_.real("constructor.delta");
  auto scorer = reference_scorer(false);
  if (!scorer && delta != constructor::kNoFilter)
    throw ConfigError("constructor.scorer = none requires constructor.delta = -inf");
  std::size_t over = 0;
  const auto cands =
      constructor::construct_candidates(store, results, cfg_.size("constructor.budget"), scorer, threads_, &over);
  constructor::save_instances_jsonl(dir_ / "candidates.jsonl", cands);
  Output o;
  o.artifacts = {{"candidates", "candidates.jsonl"}};
  o.counts = {{"n_candidates", cands.size()},
              {"n_over_budget", over},
              {"scorer", scorer ? cfg_.str("constructor.scorer") : "none"}};
  return o;
}

Run::Output Run::filter() {
  auto cands = constructor::load_instances_jsonl(artifact(Stage::construct, "candidates"));
  const auto cm = manifest(Stage::construct);
  constructor::BuildManifest bm;
  bm.n_queries = cands.size();
  bm.n_over_budget = cm.counts.value("n_over_budget", std::size_t{0});
  bm.strategy = cfg_.str("retrieval.strategy");
  bm.k = cfg_.size("retrieval.k");
  bm.budget = cfg_.size("constructor.budget");
  bm.delta = cfg_.real("constructor.delta");
  bm.n_candidates = cands.size();
  std::vector<constructor::PretrainInstance> kept;
  if (bm.delta == constructor::kNoFilter) {
    kept = std::move(cands);
    for (std::size_t i = 0; i < kept.size(); ++i) kept[i].id = i;
  } else {
    kept = constructor::filter_instances(std::move(cands), bm.delta).retained;
  }
  constructor::summarize(bm, kept);
  constructor::save_instances_jsonl(dir_ / "instances.jsonl", kept);
  io::write_json(dir_ / "build_manifest.json", bm.to_json());
  Output o;
  o.artifacts = {{"instances", "instances.jsonl"}, {"build_manifest", "build_manifest.json"}};
  o.counts = {{"n_candidates", bm.n_candidates},
              {"n_retained", bm.n_retained},
              {"retained_fraction", bm.retained_fraction},
              {"mean_demos_per_instance", bm.mean_demos_per_instance},
              {"mean_instance_tokens", bm.mean_instance_tokens}};
  return o;
}

Run::Output Run::pretrain() {
  auto tok = corpus::Tokenizer::load(artifact(Stage::build_corpus, "tokenizer"));
  const auto insts = constructor::load_instances_jsonl(artifact(Stage::filter, "instances"));
  const auto docs = load_documents(artifact(Stage::build_corpus, "documents"));
  std::vector<std::vector<lm::TokenId>> icl, lmseq;
  for (const auto& i : insts) icl.push_back(lm::to_sequence(tok, i.text));
  for (const auto& d : docs) lmseq.push_back(lm::to_sequence(tok, d));

  lm::NeuralLmShape sh;
  sh.context = static_cast<std::uint32_t>(cfg_.size("pretrain.context"));
  sh.embed = static_cast<std::uint32_t>(cfg_.size("pretrain.embed"));
  sh.hidden = static_cast<std::uint32_t>(cfg_.size("pretrain.hidden"));
  sh.summary = cfg_.flag("pretrain.summary");
  const std::uint64_t seed = cfg_.size("pretrain.seed");
  auto model = lm::NeuralLm::random(std::move(tok), sh, cfg_.real("pretrain.init_scale"), seed);
  lm::MixConfig mc;
  mc.alpha = cfg_.real("pretrain.alpha");
  mc.steps = cfg_.size("pretrain.steps");
  mc.batch = cfg_.size("pretrain.batch");
  mc.lr = cfg_.real("pretrain.lr");
  mc.clip = cfg_.real("pretrain.clip");
  mc.seed = seed;
  const auto curves = lm::train_mixed(model, icl, lmseq, mc);
  model.save(dir_ / "model.nlm");
  std::ostringstream csv;
  csv.precision(17);
  csv << "step,icl_loss,lm_loss\n";
  for (std::size_t i = 0; i < curves.icl_loss.size(); ++i)
    csv << i << ',' << curves.icl_loss[i] << ',' << curves.lm_loss[i] << '\n';
  io::write_text(dir_ / "curves.csv", csv.str());
  auto tail_mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const std::size_t n = std::min<std::size_t>(100, v.size());
    double s = 0;
    for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(n);
  };
  Output o;
  o.artifacts = {{"model", "model.nlm"}, {"curves", "curves.csv"}};
  o.counts = {{"params", model.param_count()},
              {"steps", curves.icl_loss.size()},
              {"final_icl_loss", tail_mean(curves.icl_loss)},
              {"final_lm_loss", tail_mean(curves.lm_loss)}};
  return o;
}

Run::Output Run::eval() {
  const auto files = expand_tasks(cfg_.paths("eval.tasks"));
  if (files.empty()) throw ConfigError("eval.tasks lists no task files");
  const auto model = lm::NeuralLm::load(artifact(Stage::pretrain, "model"));
  eval::ShotConfig shots;
  shots.n_shots = cfg_.size("eval.shots");
  shots.seeds = cfg_.at("eval.seeds").get<std::vector<std::uint64_t>>();
  shots.max_eval_examples = cfg_.size("eval.max_eval");
  shots.max_new_tokens = cfg_.size("eval.max_new_tokens");
  const lm::ScorerFactory factory = [&model] { return std::make_unique<lm::NeuralLm>(model); };

  std::vector<eval::EvalReport> reports;
  for (const auto& f : files) {
    const auto task = eval::load_task(f);
    reports.push_back(task.kind == eval::TaskKind::classification
                          ? eval::few_shot_eval(task, factory, shots, threads_)
                          : eval::generation_eval(task, model, shots, threads_));
  }
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  io::write_json(dir_ / "eval.json", arr);
  io::write_text(dir_ / "eval.csv", eval::reports_to_csv(reports));

  Output o;
  o.artifacts = {{"reports", "eval.json"}, {"csv", "eval.csv"}};
  o.counts["n_tasks"] = reports.size();
  // per-seed accuracy averaged over classification tasks
  std::vector<double> per_seed(shots.seeds.size(), 0.0);
  std::size_t n_cls = 0;
  for (const auto& r : reports) {
    o.counts["task." + r.task] = r.mean;
    if (r.metric != "accuracy") continue;
    ++n_cls;
    for (std::size_t s = 0; s < per_seed.size(); ++s) per_seed[s] += r.values[s];
  }
  if (n_cls) {
    double mean = 0, var = 0;
    for (auto& v : per_seed) mean += (v /= static_cast<double>(n_cls));
    mean /= static_cast<double>(per_seed.size());
    for (double v : per_seed) var += (v - mean) * (v - mean);
    o.counts["accuracy_per_seed"] = per_seed;
    o.counts["accuracy_mean"] = mean;
    o.counts["accuracy_std"] = std::sqrt(var / static_cast<double>(per_seed.size()));
  }
  return o;
}

Run::Output Run::compare() {
  const auto store = corpus::ParagraphStore::load_jsonl(artifact(Stage::build_corpus, "paragraphs"));
  const auto docs = load_documents(artifact(Stage::build_corpus, "documents"));
  const auto insts = constructor::load_instances_jsonl(artifact(Stage::filter, "instances"));

  retrieval::Resources res;
  res.store = &store;
  res.seed = cfg_.size("run.seed");
  const auto rnd = retrieval::retrieve_all(retrieval::Strategy::random, cfg_.size("retrieval.k"), res, threads_);
  const auto rnd_insts =
      constructor::construct_candidates(store, rnd, cfg_.size("constructor.budget"), nullptr, threads_);

  std::vector<std::string> picl_t, rnd_t;
  for (const auto& i : insts) picl_t.push_back(i.text);
  for (const auto& i : rnd_insts) rnd_t.push_back(i.text);
  auto scorer = reference_scorer(true)();
  const auto cmp = eval::compare_datasets({{"full_doc", docs}, {"random", rnd_t}, {"picl", picl_t}}, *scorer);
  io::write_text(dir_ / "compare.csv", cmp.to_csv());

  Output o;
  o.artifacts = {{"comparison", "compare.csv"}};
  for (const auto& r : cmp.rows) o.counts["ppl." + r.name] = r.mean_perplexity;
  const double pr = cmp.rows[1].mean_perplexity, pp = cmp.rows[2].mean_perplexity;
  o.counts["relative_gap"] = pr > 0 ? (pr - pp) / pr : 0.0;
  o.counts["scorer"] = scorer->describe();
  return o;
}

// ---- sweep, report ----

Stage stage_for_key(const std::string& key) {
  const auto sec = key.substr(0, key.find('.'));
  if (sec == "run" || sec == "corpus" || sec == "tokenizer") return Stage::build_corpus;
  if (sec == "encoder") return Stage::train_encoder;
  if (sec == "index") return Stage::build_index;
  if (sec == "retrieval") return Stage::retrieve;
  if (key == "constructor.delta") return Stage::filter;
  if (sec == "constructor") return Stage::construct;
  if (sec == "pretrain") return Stage::pretrain;
  if (sec == "eval") return Stage::eval;
  throw ConfigError("no stage reads '" + key + "'");
}

std::string resolve_sweep_param(const std::string& param) {
  static const std::map<std::string, std::string> alias = {
      {"delta", "constructor.delta"}, {"alpha", "pretrain.alpha"}, {"strategy", "retrieval.strategy"},
      {"k", "retrieval.k"},           {"budget", "constructor.budget"}, {"shots", "eval.shots"}};
  if (const auto it = alias.find(param); it != alias.end()) return it->second;
  const auto keys = valid_keys();
  if (std::find(keys.begin(), keys.end(), param) == keys.end()) {
    std::string list;
    for (const auto& [a, _] : alias) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError("unknown sweep parameter '" + param + "' (aliases: " + list + "; or any dotted config key)");
  }
  return param;
}

namespace {

// Stages whose outputs change when `key` does: the first reader and
// everything downstream of it.
std::set<Stage> affected(const Run& run, Stage first) {
  std::set<Stage> out = {first};
  bool grew = true;
  while (grew) {
    grew = false;
    for (Stage s : all_stages()) {
      if (out.contains(s)) continue;
      for (Stage d : run.dependencies(s))
        if (out.contains(d)) {
          out.insert(s);
          grew = true;
          break;
        }
    }
  }
  return out;
}

std::string safe_name(const std::string& v) {
  std::string s;
  for (char c : v) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return s.empty() ? "_" : s;
}

json metric_row(const Run& run) {
  json m = json::object();
  auto grab = [&](Stage s, const char* key, const char* as) {
    if (!run.has(s)) return;
    const auto c = run.manifest(s).counts;
    if (c.contains(key)) m[as] = c[key];
  };
  grab(Stage::retrieve, "purity", "purity");
  grab(Stage::filter, "retained_fraction", "retained_fraction");
  grab(Stage::filter, "mean_demos_per_instance", "mean_demos_per_instance");
  grab(Stage::eval, "accuracy_mean", "accuracy_mean");
  grab(Stage::eval, "accuracy_std", "accuracy_std");
  return m;
}

std::string csv_cell(const json& j) {
  if (j.is_null()) return "";
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_float()) {
    std::ostringstream os;
    os.precision(10);
    os << j.get<double>();
    return os.str();
  }
  return j.dump();
}

}  // namespace

fs::path sweep(const Config& base, const std::string& param, const std::vector<std::string>& values,
               unsigned threads) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const std::string key = resolve_sweep_param(param);
  Run base_run(base, threads);
  const Stage first = stage_for_key(key);

  static const char* kCols[] = {"purity", "retained_fraction", "mean_demos_per_instance", "accuracy_mean",
                                "accuracy_std"};
  std::ostringstream csv;
  csv << "param,value";
  for (const char* c : kCols) csv << ',' << c;
  csv << '\n';

  for (const auto& v : values) {
    Config sub = base;
    sub.set(key, v);
    const fs::path sub_dir = base_run.dir() / "sweep" / safe_name(key) / safe_name(v);
    sub.set("run.dir", sub_dir.string());
    Run r(sub, threads);
    const auto redo = affected(r, first);
    fs::create_directories(sub_dir / "manifests");
    // Upstream artifacts are identical to the base run's: copy them in.
    for (Stage s : all_stages()) {
      if (redo.contains(s) || r.has(s)) continue;
      bool needed = false;
      for (Stage t : redo) {
        std::set<Stage> seen;
        std::vector<Stage> todo = r.dependencies(t);
        while (!todo.empty() && !needed) {
          Stage d = todo.back();
          todo.pop_back();
          if (d == s) needed = true;
          if (seen.insert(d).second)
            for (Stage u : r.dependencies(d)) todo.push_back(u);
        }
      }
      if (!needed) continue;
      base_run.ensure(s);
      const auto m = base_run.manifest(s);
      for (const auto& [name, a] : m.artifacts) {
        const auto src = base_run.dir() / a.path;
        fs::copy_file(src, sub_dir / a.path, fs::copy_options::overwrite_existing);
      }
      fs::copy_file(manifest_path(base_run.dir(), s), manifest_path(sub_dir, s),
                    fs::copy_options::overwrite_existing);
    }
    r.ensure(Stage::eval);
    r.ensure(Stage::compare);
    const auto m = metric_row(r);
    csv << key << ',' << v;
    for (const char* c : kCols) csv << ',' << (m.contains(c) ? csv_cell(m[c]) : "");
    csv << '\n';
  }
  const fs::path out = base_run.dir() / ("sweep_" + safe_name(key) + ".csv");
  fs::create_directories(base_run.dir());
  io::write_text(out, csv.str());
  return out;
}

Report report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> runs;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "run_manifest.json") runs.push_back(e.path().parent_path());
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) throw ConfigError("no completed runs under " + dir.string());

  struct Col {
    const char* name;
    const char* stage;  // nullptr: config key
    const char* key;
  };
  static const Col kCols[] = {
      {"strategy", nullptr, "retrieval.strategy"},
      {"k", nullptr, "retrieval.k"},
      {"budget", nullptr, "constructor.budget"},
      {"delta", nullptr, "constructor.delta"},
      {"alpha", nullptr, "pretrain.alpha"},
      {"pretrain_seed", nullptr, "pretrain.seed"},
      {"shots", nullptr, "eval.shots"},
      {"purity", "retrieve", "purity"},
      {"retained_fraction", "filter", "retained_fraction"},
      {"mean_demos_per_instance", "filter", "mean_demos_per_instance"},
      {"perplexity_gap", "compare", "relative_gap"},
      {"accuracy_mean", "eval", "accuracy_mean"},
      {"accuracy_std", "eval", "accuracy_std"},
  };

  std::ostringstream md, csv, timing;
  csv << "run,config_hash";
  md << "| run |";
  for (const auto& c : kCols) {
    csv << ',' << c.name;
    md << ' ' << c.name << " |";
  }
  csv << '\n';
  md << "\n|---|";
  for (std::size_t i = 0; i < std::size(kCols); ++i) md << "---|";
  md << '\n';
  timing << "| run | stage | seconds |\n|---|---|---|\n";

  for (const auto& r : runs) {
    json rm, values;
    for (const auto& [file, into] : {std::pair{r / "run_manifest.json", &rm}, std::pair{r / "config.json", &values}}) {
      try {
        *into = io::read_json(file);
        if (!into->is_object()) throw FormatError("not a JSON object");
      } catch (const std::exception& e) {
        throw FormatError(file.string() + ": corrupted manifest: " + e.what());
      }
    }
    if (!rm.contains("stages") || !rm["stages"].is_object() || !values.contains("values"))
      throw FormatError((r / "run_manifest.json").string() + ": corrupted manifest: missing fields");
    std::string rel = fs::relative(r, dir).generic_string();
    if (rel == ".") rel = r.filename().string();
    csv << rel << ',' << rm.value("config_hash", "");
    md << "| " << rel << " |";
    for (const auto& c : kCols) {
      json v;
      if (c.stage) {
        const auto& st = rm["stages"];
        if (st.contains(c.stage) && st[c.stage].contains("counts") && st[c.stage]["counts"].contains(c.key))
          v = st[c.stage]["counts"][c.key];
      } else {
        const std::string key = c.key;
        const auto dot = key.find('.');
        const auto& vals = values["values"];
        if (vals.contains(key.substr(0, dot))) v = vals[key.substr(0, dot)].value(key.substr(dot + 1), json());
      }
      csv << ',' << csv_cell(v);
      md << ' ' << csv_cell(v) << " |";
    }
    csv << '\n';
    md << '\n';
    for (Stage s : all_stages()) {
      const std::string name(stage_name(s));
      if (!rm["stages"].contains(name)) continue;
      std::ostringstream secs;
      secs.precision(3);
      secs << std::fixed << rm["stages"][name].value("wall_clock_s", 0.0);
      timing << "| " << rel << " | " << name << " | " << secs.str() << " |\n";
    }
  }
  Report rep;
  rep.markdown = "# Runs\n\n" + md.str() + "\n## Stage timings\n\n" + timing.str();
  rep.csv = csv.str();
  io::write_text(dir / "report.md", rep.markdown);
  io::write_text(dir / "report.csv", rep.csv);
  return rep;
}

std::map<std::string, std::string> artifact_hashes(const fs::path& run_dir) {
  std::map<std::string, std::string> out;
  for (Stage s : all_stages()) {
    const auto p = manifest_path(run_dir, s);
    if (!fs::exists(p)) continue;
    for (const auto& [name, a] : read_manifest(p).artifacts)
      out[std::string(stage_name(s)) + "/" + name] = io::sha256_file(run_dir / a.path);
  }
  return out;
}

}  // namespace picl::pipeline
