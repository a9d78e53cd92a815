#pragma once

#include <stdexcept>
#include <string>

namespace msdcrd {

/// Broad failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  validation,       // bad shapes, bad configuration, out-of-range arguments
  non_finite,       // NaN or Inf in an input
  io,               // file cannot be opened, read or written
  header,           // malformed tensor file magic/header
  dtype,            // tensor file element type is not <f4 or <f8
  truncated,        // tensor file payload shorter than its header declares
  empty_selection,  // every pooled sample fell below the filtering threshold
  degenerate,       // representation with zero self-similarity (CKA)
  stale_cache,      // backward called on a forward that does not match
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::non_finite: return "non-finite";
    case ErrorKind::io: return "io";
    case ErrorKind::header: return "header";
    case ErrorKind::dtype: return "dtype";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::empty_selection: return "empty-selection";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::stale_cache: return "stale-cache";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::validation, what);
}

}  // namespace detail
}  // namespace msdcrd
