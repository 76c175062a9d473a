#include "picl/synth/world.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "picl/io.hpp"
#include "picl/rng.hpp"

namespace picl::synth {

namespace {

const std::array<std::array<const char*, kValues>, kAttributes> kWords = {{
    {"tiny", "small", "medium", "large", "huge", "giant"},
    {"red", "blue", "green", "yellow", "black", "white"},
    {"wooden", "metal", "glass", "paper", "stone", "plastic"},
    {"circle", "square", "star", "ring", "cube", "cone"},
}};

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "gl", "sk"};
const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ou"};

std::string pseudo_word(Rng& rng) {
  std::string w;
  const auto syll = 2 + uniform_index(rng, 2);
  for (std::uint64_t i = 0; i < syll; ++i) {
    w += kOnsets[uniform_index(rng, std::size(kOnsets))];
    w += kNuclei[uniform_index(rng, std::size(kNuclei))];
  }
  return w;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

const std::vector<std::string> kTemplates = {
    "{input} : {output}", "Q: {input} A: {output}", "Input: {input} Output: {output}",
    "{input} => {output}", "Text: {input} Answer: {output}"};

}  // namespace

const std::vector<std::string>& World::generic_openers() {
  static const std::vector<std::string> g = {"so", "now", "then", "here", "well", "look"};
  return g;
}

World::World(const WorldSpec& spec) : spec_(spec) {
  if (spec.n_tasks < 2) throw ConfigError("the world needs at least 2 tasks");
  if (spec.min_doc_paragraphs < 1 || spec.max_doc_paragraphs < spec.min_doc_paragraphs)
    throw ConfigError("invalid document length range");
  if (spec.cues_per_paragraph > spec.cues_per_task) throw ConfigError("cues_per_paragraph exceeds cues_per_task");
  if (spec.heldout_fraction <= 0 || spec.heldout_fraction >= 1) throw ConfigError("heldout_fraction must be in (0, 1)");
  Rng rng(derive_seed(spec.seed, "world"));

  std::unordered_set<std::string> used;
  for (const auto& a : kWords)
    for (const char* w : a) used.insert(w);
  for (const auto& w : generic_openers()) used.insert(w);
  for (const char* w : {"yes", "no", "Q", "A", "Input", "Output", "Text", "Answer"}) used.insert(w);
  auto fresh = [&] {
    for (;;) {
      auto w = pseudo_word(rng);
      if (used.insert(w).second) return w;
    }
  };

  std::set<std::pair<std::size_t, std::set<std::uint8_t>>> rules;
  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    WorldTask task;
    task.name = "task" + std::to_string(t);
    task.attribute = t % kAttributes;
    do {
      std::vector<std::uint8_t> vals(kValues);
      for (std::size_t i = 0; i < kValues; ++i) vals[i] = static_cast<std::uint8_t>(i);
      shuffle(vals, rng);
      task.yes_values = {vals.begin(), vals.begin() + kValues / 2};
    } while (!rules.insert({task.attribute, task.yes_values}).second);
    for (std::size_t i = 0; i < spec.cues_per_task; ++i) task.cues.push_back(fresh());
    for (std::size_t i = 0; i < spec.openers_per_task; ++i) task.openers.push_back(fresh());
    tasks_.push_back(std::move(task));
  }

  std::vector<Object> all;
  for (std::size_t i = 0; i < 1296; ++i) {
    Object o;
    std::size_t x = i;
    for (auto& v : o.v) {
      v = static_cast<std::uint8_t>(x % kValues);
      x /= kValues;
    }
    all.push_back(o);
  }
  shuffle(all, rng);
  const auto n_held = static_cast<std::size_t>(spec.heldout_fraction * double(all.size()));
  heldout_.assign(all.begin(), all.begin() + n_held);
  seen_.assign(all.begin() + n_held, all.end());
  std::sort(heldout_.begin(), heldout_.end());
  std::sort(seen_.begin(), seen_.end());
}

std::string World::describe(const Object& o) const {
  std::string s;
  for (std::size_t a = 0; a < kAttributes; ++a) {
    if (a) s += ' ';
    s += kWords[a][o.v[a]];
  }
  return s;
}

std::string World::label(std::size_t task, const Object& o) const {
  const auto& t = tasks_.at(task);
  return t.yes_values.contains(o.v[t.attribute]) ? "yes" : "no";
}

std::string World::paragraph(std::size_t task, const Object& o, Rng& rng) const {
  const auto& t = tasks_.at(task);
  std::string s = uniform_unit(rng) < spec_.task_opener_prob
                      ? t.openers[uniform_index(rng, t.openers.size())]
                      : generic_openers()[uniform_index(rng, generic_openers().size())];
  s += ' ' + describe(o) + " : " + label(task, o) + " .";
  std::vector<std::size_t> idx(t.cues.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < spec_.cues_per_paragraph; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    s += ' ' + t.cues[idx[i]];
  }
  return s;
}

std::vector<corpus::Document> World::documents() const {
  Rng rng(derive_seed(spec_.seed, "documents"));
  std::vector<corpus::Document> docs;
  std::size_t remaining = spec_.n_paragraphs;
  const std::size_t span = spec_.max_doc_paragraphs - spec_.min_doc_paragraphs + 1;
  while (remaining > 0) {
    const std::size_t task = uniform_index(rng, tasks_.size());
    const std::size_t n = std::min(remaining, spec_.min_doc_paragraphs + uniform_index(rng, span));
    corpus::Document d;
    d.id = "doc" + std::to_string(docs.size());
    d.source = "synthetic";
    d.task = tasks_[task].name;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) d.text += '\n';
      d.text += paragraph(task, seen_[uniform_index(rng, seen_.size())], rng);
    }
    docs.push_back(std::move(d));
    remaining -= n;
  }
  return docs;
}

std::vector<encoder::TaskExample> World::encoder_dataset() const {
  Rng rng(derive_seed(spec_.seed, "encoder"));
  std::vector<encoder::TaskExample> out;
  for (std::size_t t = 0; t < tasks_.size(); ++t)
    for (std::size_t i = 0; i < spec_.encoder_examples_per_task; ++i) {
      const auto text = paragraph(t, seen_[uniform_index(rng, seen_.size())], rng);
      const auto colon = text.find(" : ");
      out.push_back({tasks_[t].name, text.substr(0, colon), text.substr(colon + 3)});
    }
  return out;
}

std::vector<encoder::PromptTemplate> World::encoder_templates() const {
  std::vector<encoder::PromptTemplate> out;
  for (std::size_t t = 0; t < tasks_.size(); ++t)
    for (std::size_t j = 0; j < 2; ++j)
      out.emplace_back(tasks_[t].name, kTemplates[(t + j) % kTemplates.size()]);
  return out;
}

std::vector<eval::EvalTask> World::eval_tasks() const {
  std::vector<eval::EvalTask> out;
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    Rng rng(derive_seed(spec_.seed, "eval:" + tasks_[t].name));
    const auto& wt = tasks_[t];
    eval::EvalTask task;
    task.name = wt.name;
    task.kind = eval::TaskKind::classification;
    std::string pattern = "{input} : {output} .";
    for (std::size_t i = 0; i < spec_.cues_per_paragraph; ++i) pattern += ' ' + wt.cues[i];
    task.prompt = encoder::PromptTemplate(wt.name, pattern);
    task.labels = {"yes", "no"};
    const auto& openers = generic_openers();
    auto example = [&](const Object& o) {
      return encoder::TaskExample{wt.name, openers[uniform_index(rng, openers.size())] + " " + describe(o),
                                  label(t, o)};
    };
    for (std::size_t i = 0; i < spec_.eval_train_per_task; ++i)
      task.train.push_back(example(seen_[uniform_index(rng, seen_.size())]));
    std::vector<Object> held = heldout_;
    shuffle(held, rng);
    for (std::size_t i = 0; i < spec_.eval_per_task; ++i) task.eval.push_back(example(held[i % held.size()]));
    out.push_back(std::move(task));
  }
  return out;
}

void write_world(const World& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tasks");
  {
    std::ofstream out(dir / "docs.jsonl", std::ios::binary);
    for (const auto& d : world.documents()) {
      nlohmann::json j = {{"id", d.id}, {"text", d.text}, {"source", d.source}};
      if (d.task) j["task"] = *d.task;
      out << j.dump() << '\n';
    }
    if (!out) throw Error("cannot write " + (dir / "docs.jsonl").string());
  }
  encoder::save_task_dataset(dir / "encoder.jsonl", world.encoder_dataset());
  encoder::save_templates(dir / "templates.json", world.encoder_templates());
  for (const auto& t : world.eval_tasks()) eval::save_task(dir / "tasks" / (t.name + ".json"), t);
}

}  // namespace picl::synth
