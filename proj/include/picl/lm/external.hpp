#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <sys/types.h>
#include <vector>

#include "picl/lm/scorer.hpp"

namespace picl::lm {

struct ExternalScorerOptions {
  std::vector<std::string> argv;
  /// Extra KEY=VALUE entries appended to the inherited environment.
  std::vector<std::string> env;
  std::chrono::milliseconds timeout{60000};
  std::size_t max_restarts = 2;
  std::size_t max_in_flight = 64;
};

/// Client for a child process that scores text over line-delimited JSON:
/// the child prints {"ready": true}, then answers each {"id", "text"}
/// request with {"id", "logprob", "num_tokens"} in any order. Requests are
/// pipelined. A child that exits mid-batch is restarted and the unanswered
/// requests are resent, up to max_restarts times per batch.
class ExternalScorer final : public LmScorer {
 public:
  explicit ExternalScorer(ExternalScorerOptions options);
  ~ExternalScorer() override;
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  Score logprob(std::string_view text) override;
  std::vector<Score> logprob_batch(std::span<const std::string> texts) override;
  std::string describe() const override;

  std::size_t restarts() const { return restarts_; }

  /// Whitespace-separated words with single/double quotes and backslash
  /// escapes, as in a POSIX shell without expansions.
  static std::vector<std::string> split_command(std::string_view command);

 private:
  void start();
  void stop();
  bool read_line(std::string& line, std::chrono::steady_clock::time_point deadline);

  ExternalScorerOptions opt_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string inbuf_;
  std::uint64_t next_id_ = 0;
  std::size_t restarts_ = 0;
};

}  // namespace picl::lm
