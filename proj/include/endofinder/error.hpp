#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace endofinder {

enum class Errc {
  ZeroVector,
  DimMismatch,
  BadSpec,
  EmptyMask,
  NotNormalized,
  Divergence,
  EmptyDatabase,
  KTooLarge,
  UnknownId,
  CorruptFile,
  VersionMismatch,
  NoPositives,
  LengthMismatch,
  TooFewItems,
  BadConfig,
  Io,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::BadSpec: return "BadSpec";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::NotNormalized: return "NotNormalized";
    case Errc::Divergence: return "Divergence";
    case Errc::EmptyDatabase: return "EmptyDatabase";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::UnknownId: return "UnknownId";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::NoPositives: return "NoPositives";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::TooFewItems: return "TooFewItems";
    case Errc::BadConfig: return "BadConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

// All library failures surface as this exception; `code()` carries the kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

#define ENDF_THROW_IF_NOT(cond, code, msg)             \
  do {                                                  \
    if (!(cond)) throw ::endofinder::Error((code), (msg)); \
  } while (0)

}  // namespace endofinder
