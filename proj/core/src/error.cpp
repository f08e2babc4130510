#include "ctn/error.hpp"

namespace ctn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DTypeMismatch: return "DTypeMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::CyclicRecord: return "CyclicRecord";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::HeaderInconsistent: return "HeaderInconsistent";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::VocabularyTooSmall: return "VocabularyTooSmall";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::DuplicateDomain: return "DuplicateDomain";
    case ErrorCode::UnknownDomain: return "UnknownDomain";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnknownKey: return "UnknownKey";
  }
  return "Unknown";
}

}  // namespace ctn
