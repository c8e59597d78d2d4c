#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crl {

enum class Errc {
  InvalidArgument,
  CapacityExceeded,
  SingularInput,
  ShapeMismatch,
  IndexOutOfRange,
  ZeroVector,
  UnknownToken,
  UnbalancedParens,
  ZeroCount,
  ParseError,
  IoError,
  NoPairs,
  InvalidSpec,
  NonFiniteLoss,
  UnmatchedHead,
  HeadCountMismatch,
  NotOrthogonal,
  InvalidThreshold,
  BadMagic,
  TruncatedPayload,
  MissingTruth,
  UsageError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::CapacityExceeded: return "CapacityExceeded";
    case Errc::SingularInput: return "SingularInput";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::UnbalancedParens: return "UnbalancedParens";
    case Errc::ZeroCount: return "ZeroCount";
    case Errc::ParseError: return "ParseError";
    case Errc::IoError: return "IoError";
    case Errc::NoPairs: return "NoPairs";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::UnmatchedHead: return "UnmatchedHead";
    case Errc::HeadCountMismatch: return "HeadCountMismatch";
    case Errc::NotOrthogonal: return "NotOrthogonal";
    case Errc::InvalidThreshold: return "InvalidThreshold";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::MissingTruth: return "MissingTruth";
    case Errc::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` tells callers what failed.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace crl
