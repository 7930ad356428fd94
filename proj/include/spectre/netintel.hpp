// SPDX-License-Identifier: Apache-2.0
//
// IP enrichment: geolocation, WHOIS and blacklist verdicts from pluggable
// providers. Offline mode reads one fixture file per address and never
// touches the network.
#pragma once

#include <atomic>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "spectre/anomaly.hpp"
#include "spectre/timestamp.hpp"

namespace spectre {

enum class Verdict { malicious, suspicious, clean, unknown };
std::string_view to_string(Verdict verdict) noexcept;
std::optional<Verdict> parse_verdict(std::string_view text) noexcept;

/// >= 3 positives: malicious; 1-2: suspicious; 0 of a non-zero total: clean;
/// otherwise unknown.
Verdict verdict_from_counts(int positive, int total);

enum class SourceMode { live, offline };
std::string_view to_string(SourceMode mode) noexcept;

struct GeoInfo {
    std::optional<std::string> country;
    std::optional<std::string> region;
    std::optional<std::string> city;
    std::optional<std::string> org;

    bool operator==(const GeoInfo&) const = default;
};

struct WhoisInfo {
    std::optional<std::string> netname;  // registrant / network name
    std::optional<std::string> registrar;
    std::string raw_excerpt;

    bool operator==(const WhoisInfo&) const = default;
};

struct BlacklistInfo {
    Verdict verdict = Verdict::unknown;
    int positive_engine_count = 0;
    int total_engine_count = 0;

    bool operator==(const BlacklistInfo&) const = default;
};

struct IpIntel {
    std::string ip;
    bool routable = false;
    std::optional<GeoInfo> geo;
    std::optional<WhoisInfo> whois;
    std::optional<BlacklistInfo> blacklist;
    SourceMode source_mode = SourceMode::offline;
    Timestamp fetched_at{};
    std::vector<std::string> notes;  // per-provider failures

    bool operator==(const IpIntel&) const = default;
};

json to_json(const IpIntel& intel);

// -- time ------------------------------------------------------------------

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() = 0;
    virtual void sleep_until(Timestamp t) = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() override;
    void sleep_until(Timestamp t) override;
};

/// Test clock: time only moves when set or slept on.
class ManualClock final : public Clock {
public:
    explicit ManualClock(Timestamp start) : now_(start) {}
    Timestamp now() override;
    void sleep_until(Timestamp t) override;
    void advance(std::chrono::microseconds d);

private:
    std::mutex mu_;
    Timestamp now_;
};

/// Sliding one-minute window shared by all threads using one provider.
class RateLimiter {
public:
    RateLimiter(double per_minute, std::shared_ptr<Clock> clock);

    /// Blocks (via the clock) until a request may be sent, then records it.
    void acquire();

private:
    std::size_t limit_;
    std::shared_ptr<Clock> clock_;
    std::mutex mu_;
    std::deque<Timestamp> sent_;
};

// -- providers -------------------------------------------------------------
//
// Providers throw spectre::Error on failure; RateLimitedError when the
// service refuses the request.

class GeoProvider {
public:
    virtual ~GeoProvider() = default;
    virtual GeoInfo geo(const std::string& ip) = 0;
};

class WhoisProvider {
public:
    virtual ~WhoisProvider() = default;
    virtual WhoisInfo whois(const std::string& ip) = 0;
};

class BlacklistProvider {
public:
    virtual ~BlacklistProvider() = default;
    virtual BlacklistInfo blacklist(const std::string& ip) = 0;
};

/// Network requests issued by the live providers in this process.
std::size_t live_network_operations();

/// ipinfo.io JSON over HTTPS; token optional.
class IpinfoProvider final : public GeoProvider {
public:
    IpinfoProvider(std::string token, double timeout_seconds);
    GeoInfo geo(const std::string& ip) override;

private:
    std::string token_;
    double timeout_;
};

/// Port-43 WHOIS starting at `server`, following one "refer:" hop.
class Port43WhoisProvider final : public WhoisProvider {
public:
    Port43WhoisProvider(std::string server, double timeout_seconds);
    WhoisInfo whois(const std::string& ip) override;

private:
    std::string server_;
    double timeout_;
};

/// VirusTotal v3 ip_addresses endpoint; counts from last_analysis_stats.
class VirusTotalProvider final : public BlacklistProvider {
public:
    VirusTotalProvider(std::string api_key, double timeout_seconds);
    BlacklistInfo blacklist(const std::string& ip) override;

private:
    std::string api_key_;
    double timeout_;
};

/// Parses port-43 response text (exposed for tests).
WhoisInfo parse_whois_text(std::string_view text, std::string_view server);

/// Fixture file name for an address: canonical text with ':' replaced by '_'
/// plus ".json", e.g. "2001_db8__1.json".
std::string fixture_file_name(std::string_view ip);

/// Reads {"geo": {...}, "whois": {...}, "blacklist": {...}, "fetched_at": ...}.
/// Each section is optional; a blacklist section without "verdict" gets one
/// from verdict_from_counts.
class FixtureProvider final : public GeoProvider, public WhoisProvider, public BlacklistProvider {
public:
    FixtureProvider(std::filesystem::path dir, bool strict);

    GeoInfo geo(const std::string& ip) override;
    WhoisInfo whois(const std::string& ip) override;
    BlacklistInfo blacklist(const std::string& ip) override;
    std::optional<Timestamp> fetched_at(const std::string& ip);

    /// Parsed fixture, or nullopt when the file is absent (FixtureMissing if
    /// strict).
    std::optional<json> load(const std::string& ip);

private:
    std::filesystem::path dir_;
    bool strict_;
};

// -- configuration and lookups ---------------------------------------------

struct ProviderConfig {
    SourceMode mode = SourceMode::offline;
    std::filesystem::path fixture_dir;
    bool strict = false;  // offline: a missing fixture is an error
    std::map<std::string, std::string> api_key_env_names{{"ipinfo", "SPECTRE_IPINFO_TOKEN"},
                                                         {"virustotal", "SPECTRE_VT_API_KEY"}};
    std::map<std::string, double> requests_per_minute{{"ipinfo", 60}, {"whois", 30}, {"virustotal", 4}};
    double timeout_seconds = 10;
    std::size_t max_concurrency = 4;
    std::string whois_server = "whois.iana.org";
    std::shared_ptr<Clock> clock;  // SystemClock when null
};

/// One finding with the intelligence for the address it carries.
struct EnrichedFinding {
    Finding finding;
    std::optional<IpIntel> intel;

    bool operator==(const EnrichedFinding&) const = default;
};

/// Address a finding refers to: the foreign address of a connection subject,
/// else the first routable IP literal in its evidence, else the first literal.
std::optional<std::string> finding_ip(const Finding& finding);

/// Owns providers and per-provider rate limiters so concurrent lookups share
/// them. Not copyable.
class IntelClient {
public:
    explicit IntelClient(ProviderConfig cfg);
    IntelClient(ProviderConfig cfg, std::shared_ptr<GeoProvider> geo, std::shared_ptr<WhoisProvider> whois,
                std::shared_ptr<BlacklistProvider> blacklist);
    IntelClient(const IntelClient&) = delete;
    IntelClient& operator=(const IntelClient&) = delete;

    /// InvalidIp for malformed input. Reserved addresses return routable=false
    /// without touching any provider. Provider failures become notes; only
    /// when every provider is rate limited is RateLimitedError thrown.
    IpIntel lookup(const std::string& ip);

    /// One lookup per distinct address, run on up to max_concurrency threads.
    std::vector<EnrichedFinding> enrich(const std::vector<Finding>& findings);

    /// Addresses that reached the providers so far.
    std::size_t provider_lookups() const { return lookups_.load(); }

private:
    ProviderConfig cfg_;
    std::shared_ptr<Clock> clock_;
    std::shared_ptr<GeoProvider> geo_;
    std::shared_ptr<WhoisProvider> whois_;
    std::shared_ptr<BlacklistProvider> blacklist_;
    std::shared_ptr<FixtureProvider> fixtures_;
    std::unique_ptr<RateLimiter> geo_limit_, whois_limit_, blacklist_limit_;
    std::atomic<std::size_t> lookups_{0};
};

IpIntel lookup_ip(const std::string& ip, const ProviderConfig& cfg);
std::vector<EnrichedFinding> enrich_findings(const std::vector<Finding>& findings, const ProviderConfig& cfg);

json to_json(const EnrichedFinding& row);

}  // namespace spectre
