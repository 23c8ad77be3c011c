#include "dnas/error.hpp"

namespace dnas {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kBadTarget: return "BAD_TARGET";
    case ErrorCode::kDisconnected: return "DISCONNECTED";
    case ErrorCode::kUnrepairable: return "UNREPAIRABLE";
    case ErrorCode::kInvalidCell: return "INVALID_CELL";
    case ErrorCode::kParseError: return "PARSE_ERROR";
    case ErrorCode::kNotInBench: return "NOT_IN_BENCH";
    case ErrorCode::kInsufficientRecords: return "INSUFFICIENT_RECORDS";
    case ErrorCode::kConfigError: return "CONFIG_ERROR";
    case ErrorCode::kMissingCheckpoint: return "MISSING_CHECKPOINT";
    case ErrorCode::kIoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

namespace {

std::string format_message(ErrorCode code, const std::string& message,
                           std::optional<std::size_t> line) {
  std::string out(to_string(code));
  if (line) out += " (line " + std::to_string(*line) + ")";
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::size_t> line)
    : std::runtime_error(format_message(code, message, line)),
      code_(code),
      line_(line) {}

}  // namespace dnas
