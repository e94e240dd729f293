#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace zerorl {

// Caller supplied something outside an operation's precondition.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values appeared in a computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A configuration value violated its schema. `key` names the offender.
struct ConfigError : std::runtime_error {
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key(std::move(key)) {}
  std::string key;
};

struct ParseError : std::runtime_error {
  ParseError(std::size_t offset, const std::string& what)
      : std::runtime_error("parse error at byte " + std::to_string(offset) +
                           ": " + what),
        offset(offset) {}
  std::size_t offset;
};

struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace zerorl
