// SPDX-License-Identifier: Apache-2.0
#include "spectre/ip.hpp"

#include <arpa/inet.h>

#include <cstring>

namespace spectre {

std::string IpAddress::to_string() const {
    char buf[INET6_ADDRSTRLEN] = {};
    inet_ntop(family == IpFamily::v4 ? AF_INET : AF_INET6, bytes, buf, sizeof buf);
    return buf;
}

std::optional<IpAddress> parse_ip(std::string_view text) {
    if (text.empty() || text.size() >= INET6_ADDRSTRLEN) return std::nullopt;
    std::string s(text);
    IpAddress ip;
    if (inet_pton(AF_INET, s.c_str(), ip.bytes) == 1) {
        ip.family = IpFamily::v4;
        return ip;
    }
    if (inet_pton(AF_INET6, s.c_str(), ip.bytes) == 1) {
        ip.family = IpFamily::v6;
        return ip;
    }
    return std::nullopt;
}

std::string canonical_ip(std::string_view text) {
    auto ip = parse_ip(text);
    return ip ? ip->to_string() : std::string(text);
}

namespace {

bool v4_reserved(const unsigned char* b) {
    auto in = [&](unsigned a0, unsigned a1, int prefix) {
        std::uint32_t addr = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
        std::uint32_t net = (a0 << 24) | (a1 << 16);
        std::uint32_t mask = prefix == 0 ? 0 : ~std::uint32_t{0} << (32 - prefix);
        return (addr & mask) == (net & mask);
    };
    auto in24 = [&](unsigned a0, unsigned a1, unsigned a2) { return b[0] == a0 && b[1] == a1 && b[2] == a2; };
    return in(0, 0, 8)            // "this" network
           || in(10, 0, 8)        // private
           || in(100, 64, 10)     // CGNAT
           || in(127, 0, 8)       // loopback
           || in(169, 254, 16)    // link-local
           || in(172, 16, 12)     // private
           || in24(192, 0, 0)     // IETF protocol assignments
           || in24(192, 0, 2)     // TEST-NET-1
           || in(192, 168, 16)    // private
           || in(198, 18, 15)     // benchmarking
           || in24(198, 51, 100)  // TEST-NET-2
           || in24(203, 0, 113)   // TEST-NET-3
           || in(224, 0, 4)       // multicast
           || in(240, 0, 4);      // reserved + broadcast
}

}  // namespace

bool is_reserved(const IpAddress& ip) {
    if (ip.family == IpFamily::v4) return v4_reserved(ip.bytes);
    const unsigned char* b = ip.bytes;
    static const unsigned char zeros[16] = {};
    if (std::memcmp(b, zeros, 15) == 0 && (b[15] == 0 || b[15] == 1)) return true;  // :: and ::1
    static const unsigned char mapped[12] = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff};
    if (std::memcmp(b, mapped, 12) == 0) return v4_reserved(b + 12);
    if (b[0] == 0xfe && (b[1] & 0xc0) == 0x80) return true;                      // fe80::/10
    if ((b[0] & 0xfe) == 0xfc) return true;                                      // fc00::/7
    if (b[0] == 0xff) return true;                                               // multicast
    if (b[0] == 0x20 && b[1] == 0x01 && b[2] == 0x0d && b[3] == 0xb8) return true;  // 2001:db8::/32
    return false;
}

}  // namespace spectre
