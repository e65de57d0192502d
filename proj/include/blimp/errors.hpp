#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace blimp {

enum class ErrorKind {
    GimbalSingularity,
    NonFiniteState,
    SingularMass,
    EmptyAnchorSet,
    LengthMismatch,
    NonFiniteGradient,
    EmptyRegion,
    RankDeficient,
    InsufficientCoverage,
    ParseError,
    RateError,
    SchemaError,
    InvalidArgument,
    IoError,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` distinguishes the cause.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Message without the kind prefix, for re-wrapping with more context.
    const std::string& message() const noexcept { return message_; }

    /// Validation errors map to CLI exit code 1, numeric/runtime failures to 2.
    bool is_validation() const noexcept {
        switch (kind_) {
            case ErrorKind::ParseError:
            case ErrorKind::RateError:
            case ErrorKind::SchemaError:
            case ErrorKind::InvalidArgument:
            case ErrorKind::IoError:
            case ErrorKind::LengthMismatch:
            case ErrorKind::EmptyAnchorSet:
                return true;
            default:
                return false;
        }
    }

private:
    ErrorKind kind_;
    std::string message_;
};

}  // namespace blimp
