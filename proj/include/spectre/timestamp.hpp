// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace spectre {

/// UTC instant with microsecond resolution (Volatility prints at most that).
using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;

/// Parses ISO-8601 date-times such as "2024-09-22T01:57:09+00:00",
/// "2024-09-22T01:57:09.123456Z" or "2024-10-20T08:30:00" (no offset = UTC).
/// Returns nullopt on anything else.
std::optional<Timestamp> parse_timestamp(std::string_view text);

/// Canonical rendering: "YYYY-MM-DDTHH:MM:SS[.ffffff]+00:00".
std::string format_timestamp(Timestamp ts);

Timestamp timestamp_from_unix(std::int64_t seconds);
std::int64_t unix_seconds(Timestamp ts);

}  // namespace spectre
