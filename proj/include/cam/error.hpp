#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cam {

enum class ErrorKind {
  UnknownCharacter,
  LabelTooLong,
  AllBackground,
  CorruptRecord,
  MissingMask,
  SchemaVersionMismatch,
  ShapeMismatch,
  SingularSystem,
  IndivisibleGrid,
  UnknownStrategy,
  SequenceTooLong,
  LengthMismatch,
  DatasetMissing,
  NonFiniteLoss,
  VocabMismatch,
  InvalidConfig,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownCharacter: return "UnknownCharacter";
    case ErrorKind::LabelTooLong: return "LabelTooLong";
    case ErrorKind::AllBackground: return "AllBackground";
    case ErrorKind::CorruptRecord: return "CorruptRecord";
    case ErrorKind::MissingMask: return "MissingMask";
    case ErrorKind::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::IndivisibleGrid: return "IndivisibleGrid";
    case ErrorKind::UnknownStrategy: return "UnknownStrategy";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DatasetMissing: return "DatasetMissing";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::VocabMismatch: return "VocabMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cam
