// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spectre {

enum class ErrorKind {
    MalformedJson,
    SchemaError,
    IoError,
    InvalidConfig,
    LabelCollision,
    TooFewSnapshots,
    InvalidIp,
    FixtureMissing,
    RateLimited,
    EmptyInput,
    NoTimestampedProcesses,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), detail_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

    /// Same kind, message prefixed with `context` (e.g. the file being loaded).
    Error annotated(std::string_view context) const {
        return Error(kind_, std::string(context) + ": " + detail_);
    }

private:
    ErrorKind kind_;
    std::string detail_;
};

/// Thrown when a live provider refuses a request; retry_after is in seconds.
class RateLimitedError : public Error {
public:
    RateLimitedError(const std::string& message, double retry_after)
        : Error(ErrorKind::RateLimited, message), retry_after_(retry_after) {}
    double retry_after() const noexcept { return retry_after_; }

private:
    double retry_after_;
};

}  // namespace spectre
