#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace picl {

using ParagraphId = std::uint64_t;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, template, or argument detected before work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was asked to run before the stages it reads from.
class StageDependencyError : public Error {
 public:
  StageDependencyError(std::string stage, const std::string& what)
      : Error(what), stage_(std::move(stage)) {}
  const std::string& required_stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Violation of the external scoring protocol.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string raw_line)
      : Error(what), raw_line_(std::move(raw_line)) {}
  const std::string& raw_line() const { return raw_line_; }

 private:
  std::string raw_line_;
};

}  // namespace picl
