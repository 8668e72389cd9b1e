#pragma once

#include <stdexcept>
#include <string>

namespace alibi_lm {

// Base for every failure raised by the library. `kind()` is a short
// machine-readable tag used by the CLI when it reports an error.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define ALIBI_LM_ERROR_KIND(Name, Tag)                          \
  class Name : public Error {                                   \
   public:                                                      \
    using Error::Error;                                         \
    const char* kind() const noexcept override { return Tag; }  \
  }

ALIBI_LM_ERROR_KIND(DimensionError, "dimension");
ALIBI_LM_ERROR_KIND(IndexError, "index");
ALIBI_LM_ERROR_KIND(RankError, "rank");
ALIBI_LM_ERROR_KIND(ArgumentError, "argument");
ALIBI_LM_ERROR_KIND(DegenerateRowError, "degenerate-row");
ALIBI_LM_ERROR_KIND(IoError, "io");
ALIBI_LM_ERROR_KIND(EmptyCorpusError, "empty-corpus");
ALIBI_LM_ERROR_KIND(CheckpointError, "checkpoint");
ALIBI_LM_ERROR_KIND(ConfigMismatchError, "config-mismatch");
ALIBI_LM_ERROR_KIND(DivergenceError, "divergence");

#undef ALIBI_LM_ERROR_KIND

// Raised by the config parser; carries the offending key and 1-based line.
// line is 1-based; 0 means the key took its default or came from a flag.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, int line, const std::string& message)
      : Error("config key '" + key + "' (" + (line > 0 ? "line " + std::to_string(line) : std::string("not set in file")) +
              "): " + message),
        key_(key),
        line_(line) {}
  const char* kind() const noexcept override { return "config"; }
  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

 private:
  std::string key_;
  int line_;
};

}  // namespace alibi_lm
