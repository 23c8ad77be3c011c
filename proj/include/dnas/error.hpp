#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dnas {

enum class ErrorCode {
  kShapeMismatch,
  kBadTarget,
  kDisconnected,
  kUnrepairable,
  kInvalidCell,
  kParseError,
  kNotInBench,
  kInsufficientRecords,
  kConfigError,
  kMissingCheckpoint,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> line = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  // 1-based input line for parse/ingest failures.
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
};

}  // namespace dnas
