#pragma once

#include <stdexcept>
#include <string>

namespace tact {

// Configuration / parameter problems (bad config file, invalid argument
// combinations). The CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite arithmetic is required. Exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or empty data where an operation requires some (empty buffer,
// empty point cloud).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor / sequence dimension mismatches.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation called in a state that does not allow it (step after done,
// backward without forward).
struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tact
