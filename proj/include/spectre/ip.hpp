// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace spectre {

enum class IpFamily { v4, v6 };

struct IpAddress {
    IpFamily family = IpFamily::v4;
    unsigned char bytes[16] = {};  // v4 uses the first four

    /// inet_ntop form, e.g. "2001:db8::1".
    std::string to_string() const;
};

std::optional<IpAddress> parse_ip(std::string_view text);

/// Canonical text for a valid address, the input unchanged otherwise. Used
/// for set membership so "2001:DB8::1" and "2001:db8:0::1" compare equal.
std::string canonical_ip(std::string_view text);

/// Loopback, unspecified, link-local, private (RFC 1918 / ULA), CGNAT,
/// documentation, benchmarking, multicast and reserved ranges.
bool is_reserved(const IpAddress& ip);

}  // namespace spectre
