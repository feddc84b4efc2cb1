#pragma once

#include <stdexcept>
#include <string>

namespace qfilter {

enum class ErrorKind {
  argument,
  parse,
  integrity,
  format,
  version,
  corruption,
  io,
  shape,
  empty_pool,
  insufficient_population,
  insufficient_band,
  balance,
  divergence,
  alignment,
  undefined_correlation,
  degenerate_input,
  empty_input,
  coverage,
  config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument: return "argument";
    case ErrorKind::parse: return "parse";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::format: return "format";
    case ErrorKind::version: return "version";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::io: return "io";
    case ErrorKind::shape: return "shape";
    case ErrorKind::empty_pool: return "empty-pool";
    case ErrorKind::insufficient_population: return "insufficient-population";
    case ErrorKind::insufficient_band: return "insufficient-band";
    case ErrorKind::balance: return "balance";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
    case ErrorKind::degenerate_input: return "degenerate-input";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace qfilter
