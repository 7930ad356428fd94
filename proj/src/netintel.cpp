// SPDX-License-Identifier: Apache-2.0
#include "spectre/netintel.hpp"

#include <netdb.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"
#include "spectre/ip.hpp"

namespace spectre {

namespace fs = std::filesystem;
using std::chrono::microseconds;

std::string_view to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::malicious: return "malicious";
        case Verdict::suspicious: return "suspicious";
        case Verdict::clean: return "clean";
        case Verdict::unknown: return "unknown";
    }
    return "unknown";
}

std::optional<Verdict> parse_verdict(std::string_view text) noexcept {
    for (auto v : {Verdict::malicious, Verdict::suspicious, Verdict::clean, Verdict::unknown})
        if (to_string(v) == text) return v;
    return std::nullopt;
}

Verdict verdict_from_counts(int positive, int total) {
    if (positive >= 3) return Verdict::malicious;
    if (positive >= 1) return Verdict::suspicious;
    if (positive == 0 && total > 0) return Verdict::clean;
    return Verdict::unknown;
}

std::string_view to_string(SourceMode mode) noexcept { return mode == SourceMode::live ? "live" : "offline"; }

namespace {

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

std::optional<std::string> opt_string(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw Error(ErrorKind::SchemaError, std::string(key) + " must be a string");
    return it->get<std::string>();
}

}  // namespace

json to_json(const IpIntel& intel) {
    json geo = nullptr, whois = nullptr, blacklist = nullptr;
    if (intel.geo)
        geo = {{"country", opt(intel.geo->country)},
               {"region", opt(intel.geo->region)},
               {"city", opt(intel.geo->city)},
               {"org", opt(intel.geo->org)}};
    if (intel.whois)
        whois = {{"netname", opt(intel.whois->netname)},
                 {"registrar", opt(intel.whois->registrar)},
                 {"raw_excerpt", intel.whois->raw_excerpt}};
    if (intel.blacklist)
        blacklist = {{"verdict", std::string(to_string(intel.blacklist->verdict))},
                     {"positive_engine_count", intel.blacklist->positive_engine_count},
                     {"total_engine_count", intel.blacklist->total_engine_count}};
    return json{
        {"ip", intel.ip},
        {"routable", intel.routable},
        {"geo", std::move(geo)},
        {"whois", std::move(whois)},
        {"blacklist", std::move(blacklist)},
        {"source_mode", std::string(to_string(intel.source_mode))},
        {"fetched_at", format_timestamp(intel.fetched_at)},
        {"notes", intel.notes},
    };
}

json to_json(const EnrichedFinding& row) {
    json j = to_json(row.finding);
    j["intel"] = row.intel ? to_json(*row.intel) : json(nullptr);
    return j;
}

// -- clocks and rate limiting ----------------------------------------------

Timestamp SystemClock::now() {
    return std::chrono::time_point_cast<microseconds>(std::chrono::system_clock::now());
}

void SystemClock::sleep_until(Timestamp t) { std::this_thread::sleep_until(t); }

Timestamp ManualClock::now() {
    std::lock_guard lock(mu_);
    return now_;
}

void ManualClock::sleep_until(Timestamp t) {
    std::lock_guard lock(mu_);
    if (t > now_) now_ = t;
}

void ManualClock::advance(microseconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
}

RateLimiter::RateLimiter(double per_minute, std::shared_ptr<Clock> clock)
    : limit_(per_minute > 0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(per_minute))) : 0),
      clock_(std::move(clock)) {}

void RateLimiter::acquire() {
    if (limit_ == 0) return;
    std::unique_lock lock(mu_);
    for (;;) {
        auto now = clock_->now();
        while (!sent_.empty() && sent_.front() <= now - std::chrono::minutes(1)) sent_.pop_front();
        if (sent_.size() < limit_) {
            sent_.push_back(now);
            return;
        }
        auto wake = sent_.front() + std::chrono::minutes(1);
        lock.unlock();
        clock_->sleep_until(wake);
        lock.lock();
    }
}

// -- live providers --------------------------------------------------------

namespace {

std::atomic<std::size_t> g_network_ops{0};

void apply_timeouts(httplib::Client& cli, double seconds) {
    auto whole = static_cast<time_t>(seconds);
    auto usec = static_cast<time_t>((seconds - static_cast<double>(whole)) * 1e6);
    cli.set_connection_timeout(whole, usec);
    cli.set_read_timeout(whole, usec);
    cli.set_write_timeout(whole, usec);
}

double retry_after(const httplib::Result& res) {
    if (res->has_header("Retry-After")) {
        try {
            return std::stod(res->get_header_value("Retry-After"));
        } catch (const std::exception&) {
        }
    }
    return 60.0;
}

json get_json(const std::string& host, const std::string& path, const httplib::Headers& headers, double timeout,
              const char* provider) {
    ++g_network_ops;
    httplib::Client cli("https://" + host);
    apply_timeouts(cli, timeout);
    auto res = cli.Get(path, headers);
    if (!res) throw Error(ErrorKind::IoError, std::string(provider) + ": " + httplib::to_string(res.error()));
    if (res->status == 429) throw RateLimitedError(std::string(provider) + ": HTTP 429", retry_after(res));
    if (res->status != 200)
        throw Error(ErrorKind::IoError, std::string(provider) + ": HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::MalformedJson, std::string(provider) + ": " + e.what());
    }
}

std::string whois_query(const std::string& server, const std::string& query, double timeout) {
    ++g_network_ops;
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = getaddrinfo(server.c_str(), "43", &hints, &res); rc != 0)
        throw Error(ErrorKind::IoError, "whois: resolving " + server + ": " + gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&freeaddrinfo)> guard(res, freeaddrinfo);

    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout);
    tv.tv_usec = static_cast<suseconds_t>((timeout - static_cast<double>(tv.tv_sec)) * 1e6);
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    if (fd < 0) throw Error(ErrorKind::IoError, "whois: cannot connect to " + server);

    std::string line = query + "\r\n";
    if (::send(fd, line.data(), line.size(), 0) != static_cast<ssize_t>(line.size())) {
        ::close(fd);
        throw Error(ErrorKind::IoError, "whois: send to " + server + " failed");
    }
    std::string out;
    char buf[4096];
    for (;;) {
        ssize_t n = ::recv(fd, buf, sizeof buf, 0);
        if (n <= 0) break;
        out.append(buf, static_cast<std::size_t>(n));
        if (out.size() > (1u << 20)) break;
    }
    ::close(fd);
    if (out.empty()) throw Error(ErrorKind::IoError, "whois: empty response from " + server);
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::optional<std::string> whois_field(std::string_view text, std::initializer_list<const char*> keys) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::map<std::string, std::string> first;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '%' || line[0] == '#') continue;
        auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        auto key = lower(trim(std::string_view(line).substr(0, colon)));
        auto value = trim(std::string_view(line).substr(colon + 1));
        if (!value.empty()) first.emplace(key, value);
    }
    for (const char* k : keys)
        if (auto it = first.find(k); it != first.end()) return it->second;
    return std::nullopt;
}

}  // namespace

std::size_t live_network_operations() { return g_network_ops.load(); }

IpinfoProvider::IpinfoProvider(std::string token, double timeout_seconds)
    : token_(std::move(token)), timeout_(timeout_seconds) {}

GeoInfo IpinfoProvider::geo(const std::string& ip) {
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    json j = get_json("ipinfo.io", "/" + ip + "/json", headers, timeout_, "ipinfo");
    GeoInfo g;
    g.country = opt_string(j, "country");
    g.region = opt_string(j, "region");
    g.city = opt_string(j, "city");
    g.org = opt_string(j, "org");
    return g;
}

Port43WhoisProvider::Port43WhoisProvider(std::string server, double timeout_seconds)
    : server_(std::move(server)), timeout_(timeout_seconds) {}

WhoisInfo parse_whois_text(std::string_view text, std::string_view server) {
    WhoisInfo w;
    w.netname = whois_field(text, {"netname", "net-name", "orgname", "org-name", "organisation", "owner"});
    w.registrar = whois_field(text, {"source", "registrar"});
    if (!w.registrar && !server.empty()) w.registrar = std::string(server);
    w.raw_excerpt = std::string(text.substr(0, std::min<std::size_t>(text.size(), 512)));
    return w;
}

WhoisInfo Port43WhoisProvider::whois(const std::string& ip) {
    std::string server = server_;
    std::string text = whois_query(server, ip, timeout_);
    if (auto refer = whois_field(text, {"refer", "whois"}); refer && lower(*refer) != lower(server)) {
        server = *refer;
        text = whois_query(server, ip, timeout_);
    }
    return parse_whois_text(text, server);
}

VirusTotalProvider::VirusTotalProvider(std::string api_key, double timeout_seconds)
    : api_key_(std::move(api_key)), timeout_(timeout_seconds) {}

BlacklistInfo VirusTotalProvider::blacklist(const std::string& ip) {
    if (api_key_.empty()) throw Error(ErrorKind::InvalidConfig, "virustotal: no API key configured");
    json j = get_json("www.virustotal.com", "/api/v3/ip_addresses/" + ip, {{"x-apikey", api_key_}}, timeout_,
                      "virustotal");
    try {
        const auto& stats = j.at("data").at("attributes").at("last_analysis_stats");
        BlacklistInfo b;
        b.positive_engine_count = stats.value("malicious", 0);
        for (const auto& [_, v] : stats.items())
            if (v.is_number_integer()) b.total_engine_count += v.get<int>();
        b.verdict = verdict_from_counts(b.positive_engine_count, b.total_engine_count);
        return b;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("virustotal: ") + e.what());
    }
}

// -- fixtures --------------------------------------------------------------

std::string fixture_file_name(std::string_view ip) {
    std::string name = canonical_ip(ip);
    std::replace(name.begin(), name.end(), ':', '_');
    return name + ".json";
}

FixtureProvider::FixtureProvider(fs::path dir, bool strict) : dir_(std::move(dir)), strict_(strict) {}

std::optional<json> FixtureProvider::load(const std::string& ip) {
    fs::path p = dir_ / fixture_file_name(ip);
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) {
        if (strict_) throw Error(ErrorKind::FixtureMissing, "no fixture for " + ip + " (" + p.string() + ")");
        return std::nullopt;
    }
    try {
        return json::parse(read_file(p));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::MalformedJson, p.string() + ": " + e.what());
    }
}

namespace {

const json& section(const std::optional<json>& doc, const char* name, const std::string& ip) {
    if (!doc) throw Error(ErrorKind::FixtureMissing, "no fixture for " + ip);
    auto it = doc->find(name);
    if (it == doc->end() || it->is_null())
        throw Error(ErrorKind::SchemaError, std::string("fixture for ") + ip + " has no " + name + " section");
    if (!it->is_object()) throw Error(ErrorKind::SchemaError, std::string(name) + " section must be an object");
    return *it;
}

}  // namespace

GeoInfo FixtureProvider::geo(const std::string& ip) {
    auto doc = load(ip);
    const json& s = section(doc, "geo", ip);
    GeoInfo g;
    g.country = opt_string(s, "country");
    g.region = opt_string(s, "region");
    g.city = opt_string(s, "city");
    g.org = opt_string(s, "org");
    return g;
}

WhoisInfo FixtureProvider::whois(const std::string& ip) {
    auto doc = load(ip);
    const json& s = section(doc, "whois", ip);
    WhoisInfo w;
    w.netname = opt_string(s, "netname");
    w.registrar = opt_string(s, "registrar");
    w.raw_excerpt = opt_string(s, "raw_excerpt").value_or("");
    return w;
}

BlacklistInfo FixtureProvider::blacklist(const std::string& ip) {
    auto doc = load(ip);
    const json& s = section(doc, "blacklist", ip);
    BlacklistInfo b;
    try {
        b.positive_engine_count = s.value("positive_engine_count", 0);
        b.total_engine_count = s.value("total_engine_count", 0);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, "fixture for " + ip + ": " + e.what());
    }
    if (b.positive_engine_count < 0 || b.positive_engine_count > b.total_engine_count)
        throw Error(ErrorKind::SchemaError, "fixture for " + ip + ": positive count exceeds total");
    if (auto v = opt_string(s, "verdict")) {
        auto parsed = parse_verdict(*v);
        if (!parsed) throw Error(ErrorKind::SchemaError, "fixture for " + ip + ": unknown verdict " + *v);
        b.verdict = *parsed;
    } else {
        b.verdict = verdict_from_counts(b.positive_engine_count, b.total_engine_count);
    }
    return b;
}

std::optional<Timestamp> FixtureProvider::fetched_at(const std::string& ip) {
    auto doc = load(ip);
    if (!doc) return std::nullopt;
    auto s = opt_string(*doc, "fetched_at");
    if (!s) return std::nullopt;
    auto ts = parse_timestamp(*s);
    if (!ts) throw Error(ErrorKind::SchemaError, "fixture for " + ip + ": bad fetched_at " + *s);
    return ts;
}

// -- client ----------------------------------------------------------------

namespace {

std::string env_or_empty(const ProviderConfig& cfg, const std::string& provider) {
    auto it = cfg.api_key_env_names.find(provider);
    if (it == cfg.api_key_env_names.end()) return {};
    const char* v = std::getenv(it->second.c_str());
    return v ? v : "";
}

double rate_for(const ProviderConfig& cfg, const std::string& provider) {
    auto it = cfg.requests_per_minute.find(provider);
    return it == cfg.requests_per_minute.end() ? 0.0 : it->second;
}

}  // namespace

IntelClient::IntelClient(ProviderConfig cfg) : cfg_(std::move(cfg)) {
    clock_ = cfg_.clock ? cfg_.clock : std::make_shared<SystemClock>();
    if (cfg_.mode == SourceMode::offline) {
        if (cfg_.fixture_dir.empty()) throw Error(ErrorKind::InvalidConfig, "offline mode needs a fixture directory");
        fixtures_ = std::make_shared<FixtureProvider>(cfg_.fixture_dir, cfg_.strict);
        geo_ = fixtures_;
        whois_ = fixtures_;
        blacklist_ = fixtures_;
        return;
    }
    geo_ = std::make_shared<IpinfoProvider>(env_or_empty(cfg_, "ipinfo"), cfg_.timeout_seconds);
    whois_ = std::make_shared<Port43WhoisProvider>(cfg_.whois_server, cfg_.timeout_seconds);
    blacklist_ = std::make_shared<VirusTotalProvider>(env_or_empty(cfg_, "virustotal"), cfg_.timeout_seconds);
    geo_limit_ = std::make_unique<RateLimiter>(rate_for(cfg_, "ipinfo"), clock_);
    whois_limit_ = std::make_unique<RateLimiter>(rate_for(cfg_, "whois"), clock_);
    blacklist_limit_ = std::make_unique<RateLimiter>(rate_for(cfg_, "virustotal"), clock_);
}

IntelClient::IntelClient(ProviderConfig cfg, std::shared_ptr<GeoProvider> geo, std::shared_ptr<WhoisProvider> whois,
                         std::shared_ptr<BlacklistProvider> blacklist)
    : cfg_(std::move(cfg)), geo_(std::move(geo)), whois_(std::move(whois)), blacklist_(std::move(blacklist)) {
    clock_ = cfg_.clock ? cfg_.clock : std::make_shared<SystemClock>();
    if (cfg_.mode == SourceMode::live) {
        geo_limit_ = std::make_unique<RateLimiter>(rate_for(cfg_, "ipinfo"), clock_);
        whois_limit_ = std::make_unique<RateLimiter>(rate_for(cfg_, "whois"), clock_);
        blacklist_limit_ = std::make_unique<RateLimiter>(rate_for(cfg_, "virustotal"), clock_);
    }
}

IpIntel IntelClient::lookup(const std::string& ip_text) {
    auto ip = parse_ip(ip_text);
    if (!ip) throw Error(ErrorKind::InvalidIp, "not an IP address: \"" + ip_text + "\"");
    IpIntel intel;
    intel.ip = ip->to_string();
    intel.routable = !is_reserved(*ip);
    intel.source_mode = cfg_.mode;
    intel.fetched_at = clock_->now();
    if (!intel.routable) return intel;
    ++lookups_;

    int rate_limited = 0;
    double retry = 0.0;
    auto guarded = [&](const char* name, RateLimiter* limiter, auto&& call) {
        try {
            if (limiter) limiter->acquire();
            call();
        } catch (const RateLimitedError& e) {
            ++rate_limited;
            retry = std::max(retry, e.retry_after());
            intel.notes.push_back(std::string(name) + ": rate limited, retry after " +
                                  std::to_string(static_cast<long>(std::ceil(e.retry_after()))) + " s");
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::FixtureMissing && cfg_.strict) throw;
            intel.notes.push_back(std::string(name) + ": " + e.detail());
        } catch (const std::exception& e) {
            intel.notes.push_back(std::string(name) + ": " + e.what());
        }
    };
    guarded("geo", geo_limit_.get(), [&] { intel.geo = geo_->geo(intel.ip); });
    guarded("whois", whois_limit_.get(), [&] { intel.whois = whois_->whois(intel.ip); });
    guarded("blacklist", blacklist_limit_.get(), [&] { intel.blacklist = blacklist_->blacklist(intel.ip); });
    if (rate_limited == 3) throw RateLimitedError("every provider rate limited " + intel.ip, retry);

    if (fixtures_) {
        try {
            if (auto ts = fixtures_->fetched_at(intel.ip)) intel.fetched_at = *ts;
        } catch (const Error& e) {
            intel.notes.push_back(std::string("fetched_at: ") + e.detail());
        }
    }
    return intel;
}

std::optional<std::string> finding_ip(const Finding& f) {
    if (f.subject.cls == EntityClass::connections) {
        auto key = json::parse(f.subject.key);
        if (key.is_array() && key.size() > 3 && key[3].is_string()) {
            auto addr = key[3].get<std::string>();
            if (auto ip = parse_ip(addr)) return ip->to_string();
        }
    }
    std::optional<std::string> first;
    for (const auto& line : f.evidence) {
        for (const auto& lit : extract_ip_literals(line, true)) {
            auto ip = parse_ip(lit.address);
            if (!ip) continue;
            if (!is_reserved(*ip)) return ip->to_string();
            if (!first) first = ip->to_string();
        }
    }
    return first;
}

std::vector<EnrichedFinding> IntelClient::enrich(const std::vector<Finding>& findings) {
    std::vector<std::optional<std::string>> per_finding;
    std::set<std::string> distinct;
    for (const auto& f : findings) {
        per_finding.push_back(finding_ip(f));
        if (per_finding.back()) distinct.insert(*per_finding.back());
    }
    std::vector<std::string> ips(distinct.begin(), distinct.end());
    std::vector<IpIntel> results(ips.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < ips.size(); i = next++) {
            try {
                results[i] = lookup(ips[i]);
            } catch (const Error& e) {
                IpIntel failed;
                failed.ip = ips[i];
                auto parsed = parse_ip(ips[i]);
                failed.routable = parsed && !is_reserved(*parsed);
                failed.source_mode = cfg_.mode;
                failed.fetched_at = clock_->now();
                failed.notes.push_back(e.what());
                results[i] = std::move(failed);
            }
        }
    };
    std::size_t n_threads = std::min<std::size_t>(std::max<std::size_t>(1, cfg_.max_concurrency), ips.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::map<std::string, const IpIntel*> by_ip;
    for (std::size_t i = 0; i < ips.size(); ++i) by_ip[ips[i]] = &results[i];
    std::vector<EnrichedFinding> out;
    out.reserve(findings.size());
    for (std::size_t i = 0; i < findings.size(); ++i) {
        EnrichedFinding row{findings[i], std::nullopt};
        if (per_finding[i]) row.intel = *by_ip.at(*per_finding[i]);
        out.push_back(std::move(row));
    }
    return out;
}

IpIntel lookup_ip(const std::string& ip, const ProviderConfig& cfg) { return IntelClient(cfg).lookup(ip); }

std::vector<EnrichedFinding> enrich_findings(const std::vector<Finding>& findings, const ProviderConfig& cfg) {
    return IntelClient(cfg).enrich(findings);
}

}  // namespace spectre
