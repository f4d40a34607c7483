#include "covertrace/common.hpp"

namespace covertrace {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::TotalInternalReflection: return "TotalInternalReflection";
    case ErrorKind::Miss: return "Miss";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::Behind: return "Behind";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::TooSmall: return "TooSmall";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace covertrace
