#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mxci {

enum class ErrorKind {
    ZeroDenominator,
    UnsupportedModel,
    DimensionMismatch,
    SingularMatrix,
    RankDeficient,
    SupportMismatch,
    SamplerFailure,
    FitFailure,
    InsufficientReplications,
    InvalidArgument,
    ConfigError,
};

inline std::string_view to_string(ErrorKind k) noexcept {
    switch (k) {
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::UnsupportedModel: return "UnsupportedModel";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::SupportMismatch: return "SupportMismatch";
    case ErrorKind::SamplerFailure: return "SamplerFailure";
    case ErrorKind::FitFailure: return "FitFailure";
    case ErrorKind::InsufficientReplications: return "InsufficientReplications";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a kind so callers can
/// branch on it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace mxci
