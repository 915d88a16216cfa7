#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vasa {

enum class Errc {
  DimensionMismatch,
  EmptyInput,
  MalformedRle,
  MissingOthersUnion,
  InvalidArgument,
  BackendUnavailable,
  MalformedBackendReply,
  ScriptExhausted,
  MalformedManifest,
  MissingImage,
  InvalidConfig,
  IoFailure,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MalformedRle: return "MalformedRle";
    case Errc::MissingOthersUnion: return "MissingOthersUnion";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::MalformedBackendReply: return "MalformedBackendReply";
    case Errc::ScriptExhausted: return "ScriptExhausted";
    case Errc::MalformedManifest: return "MalformedManifest";
    case Errc::MissingImage: return "MissingImage";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace vasa
