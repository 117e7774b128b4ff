#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oodlens {

enum class ErrorCode {
    MagicMismatch,
    TruncatedPayload,
    NonFiniteValue,
    IoFailure,
    BadFormat,
    DegenerateSpec,
    SingleClass,
    NonPositiveTemperature,
    EmptyClass,
    SingularCovariance,
    DimensionMismatch,
    RankDeficient,
    DegenerateResidual,
    ZeroVariance,
    EmptyInput,
    BadTarget,
    TooFewSamples,
    NonConvergence,
    EmptyGrid,
    TooFewSets,
    ShapeMismatch,
    DivergenceDetected,
    NotKPlus1Model,
    HessianNotPD,
    InvalidArgument,
    ConfigInvalid,
    MethodError,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MagicMismatch: return "MagicMismatch";
        case ErrorCode::TruncatedPayload: return "TruncatedPayload";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::BadFormat: return "BadFormat";
        case ErrorCode::DegenerateSpec: return "DegenerateSpec";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::EmptyClass: return "EmptyClass";
        case ErrorCode::SingularCovariance: return "SingularCovariance";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::DegenerateResidual: return "DegenerateResidual";
        case ErrorCode::ZeroVariance: return "ZeroVariance";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::BadTarget: return "BadTarget";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::NonConvergence: return "NonConvergence";
        case ErrorCode::EmptyGrid: return "EmptyGrid";
        case ErrorCode::TooFewSets: return "TooFewSets";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DivergenceDetected: return "DivergenceDetected";
        case ErrorCode::NotKPlus1Model: return "NotKPlus1Model";
        case ErrorCode::HessianNotPD: return "HessianNotPD";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::MethodError: return "MethodError";
    }
    return "Unknown";
}

// Every failure in the toolkit is reported through this one exception type;
// callers dispatch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace oodlens
