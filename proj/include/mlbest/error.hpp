#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mlbest {

enum class ErrorKind {
    NonSymmetric,
    NonFinite,
    NotApproxPSD,
    ShapeMismatch,
    DisconnectedGraph,
    ParseError,
    InvalidBranch,
    GenerationFailed,
    DegenerateSignal,
    NoConvergence,
    SingularW,
    NonPositiveDiagonal,
    InsufficientSamples,
    SingularCovariance,
    ConfigError,
    IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (the CLI,
/// the Monte-Carlo harness) can map it to an exit code or a failure count.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace mlbest
