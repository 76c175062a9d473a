#include "picl/encoder/prompt.hpp"

#include <fstream>

#include <json.hpp>

#include "picl/common.hpp"
#include "picl/io.hpp"

namespace picl::encoder {
namespace {

constexpr std::string_view kInput = "{input}";
constexpr std::string_view kOutput = "{output}";

std::size_t count_occurrences(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(needle); pos != std::string_view::npos;
       pos = s.find(needle, pos + needle.size()))
    ++n;
  return n;
}

std::string substitute(std::string_view pattern, std::string_view input,
                       std::string_view output) {
  std::string out;
  out.reserve(pattern.size() + input.size() + output.size());
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (pattern.substr(i, kInput.size()) == kInput) {
      out.append(input);
      i += kInput.size();
    } else if (pattern.substr(i, kOutput.size()) == kOutput) {
      out.append(output);
      i += kOutput.size();
    } else {
      out.push_back(pattern[i++]);
    }
  }
  return out;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string task, std::string pattern)
    : task_(std::move(task)), pattern_(std::move(pattern)) {
  if (count_occurrences(pattern_, kInput) != 1 || count_occurrences(pattern_, kOutput) != 1)
    throw ConfigError("template for task '" + task_ +
                      "' must contain {input} and {output} exactly once: " + pattern_);
}

std::string PromptTemplate::render(std::string_view input, std::string_view output) const {
  return substitute(pattern_, input, output);
}

std::string PromptTemplate::render_prefix(std::string_view input) const {
  const std::size_t cut = pattern_.find(kOutput);
  return substitute(std::string_view(pattern_).substr(0, cut), input, "");
}

std::string render_prompt(const PromptTemplate& tmpl, const TaskExample& example) {
  return tmpl.render(example.input, example.output);
}

std::vector<TaskExample> load_task_dataset(const std::filesystem::path& path) {
  std::vector<TaskExample> out;
  io::for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& j) {
    try {
      TaskExample ex{j.at("task").get<std::string>(), j.at("input").get<std::string>(),
                     j.at("output").get<std::string>()};
      if (ex.task.empty()) throw FormatError("empty task label");
      out.push_back(std::move(ex));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

void save_task_dataset(const std::filesystem::path& path, const std::vector<TaskExample>& data) {
  std::string text;
  for (const auto& ex : data)
    text += nlohmann::json{{"task", ex.task}, {"input", ex.input}, {"output", ex.output}}.dump() +
            "\n";
  io::write_text(path, text);
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  const nlohmann::json j = io::read_json(path);
  if (!j.is_array()) throw FormatError(path.string() + ": templates must be a JSON list");
  std::vector<PromptTemplate> out;
  for (const auto& t : j) {
    if (!t.is_object() || !t.contains("task") || !t.contains("pattern"))
      throw FormatError(path.string() + ": each template needs task and pattern");
    out.emplace_back(t["task"].get<std::string>(), t["pattern"].get<std::string>());
  }
  return out;
}

void save_templates(const std::filesystem::path& path,
                    const std::vector<PromptTemplate>& templates) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& t : templates) j.push_back({{"task", t.task()}, {"pattern", t.pattern()}});
  io::write_json(path, j);
}

}  // namespace picl::encoder
