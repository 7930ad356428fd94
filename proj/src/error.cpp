// SPDX-License-Identifier: Apache-2.0
#include "spectre/error.hpp"

namespace spectre {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::MalformedJson: return "MalformedJson";
        case ErrorKind::SchemaError: return "SchemaError";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::LabelCollision: return "LabelCollision";
        case ErrorKind::TooFewSnapshots: return "TooFewSnapshots";
        case ErrorKind::InvalidIp: return "InvalidIp";
        case ErrorKind::FixtureMissing: return "FixtureMissing";
        case ErrorKind::RateLimited: return "RateLimited";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::NoTimestampedProcesses: return "NoTimestampedProcesses";
    }
    return "Error";
}

}  // namespace spectre
