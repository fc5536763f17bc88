#pragma once

#include <stdexcept>
#include <string>

namespace mdt {

// Error families. The CLI maps them onto exit codes:
// ConfigError/UsageError -> 1, DataError family -> 2, NumericError -> 3.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid discussion structure: multiple roots, dangling parent, cycle.
struct StructureError : DataError {
  using DataError::DataError;
};

// Malformed binary or text input (PPM, checkpoint). Carries a byte offset.
struct FormatError : DataError {
  FormatError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

  // Same error with a context prefix such as the file name.
  FormatError prefixed(const std::string& context) const { return FormatError(context + ": " + what(), offset_, 0); }

 private:
  FormatError(const std::string& full, std::size_t offset, int) : DataError(full), offset_(offset) {}
  std::size_t offset_;
};

}  // namespace mdt
