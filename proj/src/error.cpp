#include "frameseg/error.hpp"

namespace frameseg {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncation: return "truncation";
    case ErrorKind::Consistency: return "consistency";
    case ErrorKind::Io: return "io";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Mismatch: return "mismatch";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace frameseg
