#include "miniwfl/error.hpp"

namespace miniwfl {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::TypeSyntaxError: return "TypeSyntaxError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::IncludeCycle: return "IncludeCycle";
    case ErrorCode::ExprSyntaxError: return "ExprSyntaxError";
    case ErrorCode::UnknownReference: return "UnknownReference";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::PlanError: return "PlanError";
    case ErrorCode::JobOrderError: return "JobOrderError";
    case ErrorCode::ScatterLengthMismatch: return "ScatterLengthMismatch";
    case ErrorCode::StagingError: return "StagingError";
    case ErrorCode::LaunchError: return "LaunchError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::OutputMissing: return "OutputMissing";
    case ErrorCode::OutputAmbiguous: return "OutputAmbiguous";
    case ErrorCode::CacheIOError: return "CacheIOError";
    case ErrorCode::IOError: return "IOError";
    case ErrorCode::DowngradeError: return "DowngradeError";
    case ErrorCode::UnknownVersion: return "UnknownVersion";
    case ErrorCode::CycleDetected: return "CycleDetected";
  }
  return "Unknown";
}

}  // namespace miniwfl
