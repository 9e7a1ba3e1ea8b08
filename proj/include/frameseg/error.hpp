#pragma once

#include <stdexcept>
#include <string>

namespace frameseg {

enum class ErrorKind {
  Format,           // bad magic, malformed header, unsupported variant
  Truncation,       // payload shorter than the header promises
  Consistency,      // decoded value violates a type invariant
  Io,               // open/read/write failure
  InvalidArgument,  // bad config value or argument
  Precondition,     // caller contract violated (unsorted input, empty set...)
  Mismatch,         // dimension or fingerprint mismatch between inputs
  Internal,
};

const char* to_string(ErrorKind kind) noexcept;

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

}  // namespace frameseg
