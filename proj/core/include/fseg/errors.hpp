#pragma once

#include <stdexcept>
#include <string>

namespace fseg {

// Base for all library failures. Maps to exit code 1 at the CLI.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Rejected inputs: bad shapes, out-of-range parameters, malformed files,
// config violations. Maps to exit code 2 at the CLI.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Training diverged or produced non-finite values.
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace fseg
