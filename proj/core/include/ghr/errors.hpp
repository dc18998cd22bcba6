#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ghr {

// Shape/dimension contract violations (mismatched operands, non-tiling
// windows, indivisible grids).
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed files. `offset` is the byte position at which parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Invalid run configuration. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A pipeline stage was invoked before the stage producing its inputs.
// CLI maps this to exit code 3.
class MissingPrerequisite : public std::runtime_error {
 public:
  explicit MissingPrerequisite(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where the contract requires finite ones (training
// divergence, NaN during rollout). CLI maps this to exit code 4.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ghr
