// Scoring-protocol child used by the lm tests. logprob is -num_tokens.
//   mock_scorer echo | shuffle | malformed | noready | hang | error
//   mock_scorer crash-once <marker-file>
#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "picl/corpus/tokenizer.hpp"

namespace {

std::string answer(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  const auto n = picl::corpus::count_tokens(j.at("text").get<std::string>());
  return nlohmann::json{{"id", j.at("id")}, {"logprob", -double(n)}, {"num_tokens", n}}.dump();
}

bool input_ready() {
  if (std::cin.rdbuf()->in_avail() > 0) return true;
  pollfd p{STDIN_FILENO, POLLIN, 0};
  return poll(&p, 1, 0) > 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  const std::string mode = argc > 1 ? argv[1] : "echo";
  if (mode == "noready") return 0;
  bool crash = false;
  if (mode == "crash-once") {
    const std::filesystem::path marker = argv[2];
    if (!std::filesystem::exists(marker)) {
      std::ofstream(marker) << "1";
      crash = true;
    }
  }
  std::cout << "{\"ready\": true}" << std::endl;
  std::string line;
  std::vector<std::string> held;
  std::mt19937 rng(1234);
  std::size_t answered = 0;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    if (mode == "hang") continue;
    if (mode == "malformed") {
      std::cout << "{not json" << std::endl;
      continue;
    }
    if (mode == "error") {
      std::cout << "{\"error\": \"model failed\"}" << std::endl;
      continue;
    }
    if (mode == "shuffle") {
      held.push_back(answer(line));
      if (held.size() >= 7 || !input_ready()) {
        std::shuffle(held.begin(), held.end(), rng);
        for (const auto& h : held) std::cout << h << '\n';
        std::cout.flush();
        held.clear();
      }
      continue;
    }
    std::cout << answer(line) << std::endl;
    if (crash && ++answered == 3) return 1;
  }
  return 0;
}
