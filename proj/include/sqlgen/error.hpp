#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sqlgen {

// Error classes surface on the command line as a single machine-readable token.
enum class ErrorKind {
  usage,
  io,
  schema,
  numeric,
  invalid_argument,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::io: return "io";
    case ErrorKind::schema: return "schema";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) {
    throw Error(ErrorKind::invalid_argument, message);
  }
}

}  // namespace sqlgen
