#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scaffold {

// Stable error taxonomy. Every throw site in the library tags one of these so
// callers (and the CLI) can map failures to exit codes and user messages
// without string matching.
enum class ErrorCode {
  CONFIG_INVALID,
  BACKEND_TIMEOUT,
  BACKEND_HTTP,
  BACKEND_MALFORMED,
  RATE_LIMITED,
  SCRIPT_TABLE_MISS,
  PRM_RANGE,
  EMPTY_STEP,
  UNSCORED_STEP,
  PARSE_ERROR,
  DUPLICATE_ID,
  MISSING_FIELD,
  SCHEMA_ERROR,
  DANGLING_PROBLEM_ID,
  MISSING_REFERENCE,
  ALL_FAILED,
  IO_ERROR,
  INVARIANT_VIOLATION,
};

inline std::string_view error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::CONFIG_INVALID: return "CONFIG_INVALID";
    case ErrorCode::BACKEND_TIMEOUT: return "BACKEND_TIMEOUT";
    case ErrorCode::BACKEND_HTTP: return "BACKEND_HTTP";
    case ErrorCode::BACKEND_MALFORMED: return "BACKEND_MALFORMED";
    case ErrorCode::RATE_LIMITED: return "RATE_LIMITED";
    case ErrorCode::SCRIPT_TABLE_MISS: return "SCRIPT_TABLE_MISS";
    case ErrorCode::PRM_RANGE: return "PRM_RANGE";
    case ErrorCode::EMPTY_STEP: return "EMPTY_STEP";
    case ErrorCode::UNSCORED_STEP: return "UNSCORED_STEP";
    case ErrorCode::PARSE_ERROR: return "PARSE_ERROR";
    case ErrorCode::DUPLICATE_ID: return "DUPLICATE_ID";
    case ErrorCode::MISSING_FIELD: return "MISSING_FIELD";
    case ErrorCode::SCHEMA_ERROR: return "SCHEMA_ERROR";
    case ErrorCode::DANGLING_PROBLEM_ID: return "DANGLING_PROBLEM_ID";
    case ErrorCode::MISSING_REFERENCE: return "MISSING_REFERENCE";
    case ErrorCode::ALL_FAILED: return "ALL_FAILED";
    case ErrorCode::IO_ERROR: return "IO_ERROR";
    case ErrorCode::INVARIANT_VIOLATION: return "INVARIANT_VIOLATION";
  }
  return "UNKNOWN";
}

/**
 * Exception carrying an ErrorCode plus a human-readable detail string.
 * http_status is set only for BACKEND_HTTP.
 */
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail, int http_status = 0)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code),
        http_status_(http_status) {}

  ErrorCode code() const { return code_; }
  int http_status() const { return http_status_; }

 private:
  ErrorCode code_;
  int http_status_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail, int http_status = 0) {
  throw Error(code, detail, http_status);
}

} // namespace scaffold
