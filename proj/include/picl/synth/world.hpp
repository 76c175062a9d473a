#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "picl/corpus/corpus.hpp"
#include "picl/encoder/prompt.hpp"
#include "picl/eval/eval.hpp"
#include "picl/rng.hpp"

namespace picl::synth {

/// A toy world of objects with four attributes. Every task labels an object
/// yes/no by whether one attribute falls in a task-specific set, and talks
/// about it with its own cue words and openers.
///
/// A paragraph reads "<opener> <size> <color> <material> <shape> : <label> .
/// <cue> <cue> <cue>". Openers are task-specific with probability
/// task_opener_prob and generic otherwise, so the label of a paragraph with a
/// generic opener is only predictable from task cues seen earlier.
struct WorldSpec {
  std::size_t n_tasks = 8;
  std::size_t n_paragraphs = 5000;
  std::size_t min_doc_paragraphs = 1;
  std::size_t max_doc_paragraphs = 3;
  std::size_t cues_per_task = 10;
  std::size_t openers_per_task = 4;
  std::size_t cues_per_paragraph = 3;
  double task_opener_prob = 0.5;
  double heldout_fraction = 0.2;  // objects never used in the corpus
  std::size_t encoder_examples_per_task = 200;
  std::size_t eval_train_per_task = 32;
  std::size_t eval_per_task = 200;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kAttributes = 4;
inline constexpr std::size_t kValues = 6;

struct Object {
  std::array<std::uint8_t, kAttributes> v{};
  auto operator<=>(const Object&) const = default;
};

struct WorldTask {
  std::string name;
  std::size_t attribute = 0;
  std::set<std::uint8_t> yes_values;
  std::vector<std::string> cues;
  std::vector<std::string> openers;
};

class World {
 public:
  explicit World(const WorldSpec& spec);

  const WorldSpec& spec() const { return spec_; }
  const std::vector<WorldTask>& tasks() const { return tasks_; }
  const std::vector<Object>& seen_objects() const { return seen_; }
  const std::vector<Object>& heldout_objects() const { return heldout_; }

  std::string describe(const Object& o) const;
  std::string label(std::size_t task, const Object& o) const;
  /// One paragraph line of `task` about `o`.
  std::string paragraph(std::size_t task, const Object& o, Rng& rng) const;

  /// Single-task documents carrying their task label, n_paragraphs lines in
  /// total.
  std::vector<corpus::Document> documents() const;
  /// Rendered-example training set for the encoder, and its templates.
  std::vector<encoder::TaskExample> encoder_dataset() const;
  std::vector<encoder::PromptTemplate> encoder_templates() const;
  /// One classification task per world task. Demonstrations and queries use
  /// generic openers; the template carries the task's cues after the label,
  /// and queries are drawn from held-out objects.
  std::vector<eval::EvalTask> eval_tasks() const;

  static const std::vector<std::string>& generic_openers();

 private:
  WorldSpec spec_;
  std::vector<WorldTask> tasks_;
  std::vector<Object> seen_, heldout_;
};

/// Writes docs.jsonl, encoder.jsonl, templates.json and tasks/<name>.json
/// under `dir`.
void write_world(const World& world, const std::filesystem::path& dir);

}  // namespace picl::synth
