#include "bcnn/error.hpp"

namespace bcnn {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonBinaryEntry: return "NonBinaryEntry";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidParallelism: return "InvalidParallelism";
    case ErrorCode::NonPsdCovariance: return "NonPsdCovariance";
    case ErrorCode::BudgetTooLarge: return "BudgetTooLarge";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DataExhausted: return "DataExhausted";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

}  // namespace bcnn
