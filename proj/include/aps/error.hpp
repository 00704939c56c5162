#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aps {

enum class ErrorCode {
    HorizonMisaligned,
    ResampleUnsupported,
    SequenceTooShort,
    SkeletonMismatch,
    DegenerateVelocity,
    InvalidProbability,
    InvalidSigma,
    DimsMismatch,
    ShapeMismatch,
    BackwardBeforeForward,
    NumericalInstability,
    AbortStep,
    FormatError,
    ParseError,
    WindowTooShort,
    InvalidArgument,
    IoError,
};

// Process exit status category for an error code: 3 data, 4 numeric, 2 usage.
enum class ErrorKind { Usage, Data, Numeric };

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::HorizonMisaligned: return "HorizonMisaligned";
    case ErrorCode::ResampleUnsupported: return "ResampleUnsupported";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::SkeletonMismatch: return "SkeletonMismatch";
    case ErrorCode::DegenerateVelocity: return "DegenerateVelocity";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::InvalidSigma: return "InvalidSigma";
    case ErrorCode::DimsMismatch: return "DimsMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BackwardBeforeForward: return "BackwardBeforeForward";
    case ErrorCode::NumericalInstability: return "NumericalInstability";
    case ErrorCode::AbortStep: return "AbortStep";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::WindowTooShort: return "WindowTooShort";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

inline ErrorKind kind_of(ErrorCode code)
{
    switch (code) {
    case ErrorCode::NumericalInstability:
    case ErrorCode::AbortStep:
        return ErrorKind::Numeric;
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidProbability:
    case ErrorCode::InvalidSigma:
        return ErrorKind::Usage;
    default:
        return ErrorKind::Data;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

} // namespace aps
