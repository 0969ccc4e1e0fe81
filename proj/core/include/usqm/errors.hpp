#pragma once

#include <stdexcept>
#include <string>

namespace usqm {

/// Coarse failure classes. The CLI maps each class to a stable exit code.
enum class ErrorKind {
  Io,              // unreadable / unwritable files
  Shape,           // dimension mismatches, wrong tile size
  Range,           // out-of-range parameters, unknown layer, unreachable target
  Lookup,          // unknown organ / pair / kind name
  InsufficientData,
  UndefinedStatistic,
  Schema,          // malformed manifests, CSV rows, JSON payloads
  CorruptModel,    // invariant violation in a decoded artifact
  UnsupportedVersion,
  FingerprintMismatch,
  InternalBug,     // a self-check failed (e.g. non-monotone distortion)
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace usqm
