#pragma once

#include <stdexcept>
#include <string>

namespace lipsync {

enum class ErrorCode {
    UnreadableMedia,
    EmptyVideo,
    InvalidRate,
    ShapeMismatch,
    ConfigMismatch,
    GapTooLong,
    NoFace,
    InvalidSigma,
    RateMismatch,
    ClipTooShort,
    NonFiniteLoss,
    NonFiniteInput,
    IoFailure,
    NonPsdCovariance,
    MissingPair,
    SchemaError,
    TooShort,
    DegenerateMask,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
    if (!ok) {
        raise(code, message);
    }
}

}  // namespace lipsync
