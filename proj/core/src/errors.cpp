#include "lipsync/errors.hpp"

namespace lipsync {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnreadableMedia: return "UNREADABLE_MEDIA";
        case ErrorCode::EmptyVideo: return "EMPTY_VIDEO";
        case ErrorCode::InvalidRate: return "INVALID_RATE";
        case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
        case ErrorCode::ConfigMismatch: return "CONFIG_MISMATCH";
        case ErrorCode::GapTooLong: return "GAP_TOO_LONG";
        case ErrorCode::NoFace: return "NO_FACE";
        case ErrorCode::InvalidSigma: return "INVALID_SIGMA";
        case ErrorCode::RateMismatch: return "RATE_MISMATCH";
        case ErrorCode::ClipTooShort: return "CLIP_TOO_SHORT";
        case ErrorCode::NonFiniteLoss: return "NONFINITE_LOSS";
        case ErrorCode::NonFiniteInput: return "NONFINITE_INPUT";
        case ErrorCode::IoFailure: return "IO_FAILURE";
        case ErrorCode::NonPsdCovariance: return "NON_PSD_COVARIANCE";
        case ErrorCode::MissingPair: return "MISSING_PAIR";
        case ErrorCode::SchemaError: return "SCHEMA_ERROR";
        case ErrorCode::TooShort: return "TOO_SHORT";
        case ErrorCode::DegenerateMask: return "DEGENERATE_MASK";
    }
    return "UNKNOWN";
}

}  // namespace lipsync
