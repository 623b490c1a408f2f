#pragma once

#include <stdexcept>
#include <string>

namespace mfgsc {

enum class ErrorKind {
  InvalidArgument,
  GridMismatch,
  Cfl,
  NonFinite,
  NegativeDensity,
  ConvexityViolation,
  Parse,
  Io,
  NonConvergence,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::GridMismatch: return "grid-mismatch";
    case ErrorKind::Cfl: return "cfl";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::NegativeDensity: return "negative-density";
    case ErrorKind::ConvexityViolation: return "convexity-violation";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::NonConvergence: return "non-convergence";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so the CLI can map it
/// to a distinct exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, const std::string& what,
                    ErrorKind kind = ErrorKind::InvalidArgument) {
  if (!condition) throw Error(kind, what);
}

}  // namespace mfgsc
