#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace picl::encoder {

struct TaskExample {
  std::string task;
  std::string input;
  std::string output;

  bool operator==(const TaskExample&) const = default;
};

/// A prompt pattern with exactly one "{input}" and one "{output}" slot.
class PromptTemplate {
 public:
  /// Throws ConfigError unless each placeholder occurs exactly once.
  PromptTemplate(std::string task, std::string pattern);

  const std::string& task() const { return task_; }
  const std::string& pattern() const { return pattern_; }

  std::string render(std::string_view input, std::string_view output) const;
  /// Rendering cut just before the output slot, for scoring continuations.
  std::string render_prefix(std::string_view input) const;

 private:
  std::string task_;
  std::string pattern_;
};

std::string render_prompt(const PromptTemplate& tmpl, const TaskExample& example);

/// JSONL {"task","input","output"} per line.
std::vector<TaskExample> load_task_dataset(const std::filesystem::path& path);
void save_task_dataset(const std::filesystem::path& path, const std::vector<TaskExample>& data);
/// JSON list [{"task","pattern"}]; every pattern is validated on load.
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::filesystem::path& path, const std::vector<PromptTemplate>& templates);

}  // namespace picl::encoder
