// SPDX-License-Identifier: Apache-2.0
#include "spectre/emulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"
#include "spectre/ip.hpp"
#include "spectre/rng.hpp"

namespace spectre {

namespace fs = std::filesystem;
using std::chrono::seconds;

std::string_view to_string(Scenario scenario) noexcept {
    switch (scenario) {
        case Scenario::baseline: return "baseline";
        case Scenario::credential_dump: return "credential_dump";
        case Scenario::rundll32_process: return "rundll32_process";
        case Scenario::rundll32_child: return "rundll32_child";
        case Scenario::cmdline_ip: return "cmdline_ip";
    }
    return "baseline";
}

std::optional<Scenario> parse_scenario(std::string_view text) noexcept {
    for (auto s : kAllScenarios)
        if (to_string(s) == text) return s;
    return std::nullopt;
}

Timestamp default_window_end() { return *parse_timestamp("2024-10-20T12:00:00+00:00"); }

std::vector<std::string> default_benign_ips() {
    return {"8.8.8.8",        "8.8.4.4",        "1.1.1.1",
            "1.0.0.1",        "9.9.9.9",        "149.112.112.112",
            "208.67.222.222", "208.67.220.220", "2001:4860:4860::8888",
            "2606:4700:4700::1111"};
}

std::vector<std::string> default_malicious_ips() {
    return {"192.0.2.10",    "192.0.2.66",    "198.51.100.23",   "198.51.100.77",
            "203.0.113.5",   "203.0.113.99",  "2001:db8::bad:1", "2001:db8::dead:beef"};
}

const std::vector<std::string>& valid_connection_states() {
    static const std::vector<std::string> states{"LISTENING", "ESTABLISHED", "CLOSE_WAIT",
                                                 "TIME_WAIT", "CLOSED",      "SYN_SENT"};
    return states;
}

json to_json(const ScenarioManifest& m) {
    json planted = json::array();
    for (const auto& p : m.planted_findings)
        planted.push_back({{"rule_id", std::string(to_string(p.rule_id))},
                           {"subject", {{"class", std::string(to_string(p.subject.cls))},
                                        {"key", json::parse(p.subject.key)}}}});
    return json{
        {"scenario", std::string(to_string(m.scenario))},
        {"seed", m.seed},
        {"planted_findings", std::move(planted)},
        {"counts",
         {{"processes", m.processes},
          {"connections", m.connections},
          {"netstat_rows", m.netstat_rows},
          {"netscan_rows", m.netscan_rows},
          {"users", m.users},
          {"modules", m.modules},
          {"registry", m.registry}}},
    };
}

ScenarioManifest manifest_from_json(const json& j) {
    try {
        ScenarioManifest m;
        auto scenario = parse_scenario(j.at("scenario").get<std::string>());
        if (!scenario) throw Error(ErrorKind::SchemaError, "manifest: unknown scenario");
        m.scenario = *scenario;
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& p : j.at("planted_findings")) {
            auto rule = parse_rule_id(p.at("rule_id").get<std::string>());
            auto cls = parse_entity_class(p.at("subject").at("class").get<std::string>());
            if (!rule || !cls) throw Error(ErrorKind::SchemaError, "manifest: unknown rule or class");
            m.planted_findings.push_back({*rule, {*cls, p.at("subject").at("key").dump()}});
        }
        const auto& c = j.at("counts");
        m.processes = c.at("processes").get<std::size_t>();
        m.connections = c.at("connections").get<std::size_t>();
        m.netstat_rows = c.at("netstat_rows").get<std::size_t>();
        m.netscan_rows = c.at("netscan_rows").get<std::size_t>();
        m.users = c.at("users").get<std::size_t>();
        m.modules = c.at("modules").get<std::size_t>();
        m.registry = c.at("registry").get<std::size_t>();
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("manifest: ") + e.what());
    }
}

namespace {

constexpr const char* kWords[] = {
    "antivirus", "updater",  "browser",  "scheduler", "indexer",  "backup",   "syncagent", "telemetry",
    "printer",   "spooler",  "monitor",  "launcher",  "helper",   "notifier", "compiler",  "renderer",
    "mailer",    "calendar", "notes",    "player",    "recorder", "scanner",  "viewer",    "editor",
    "gateway",   "tunnel",   "vault",    "keeper",    "tracker",  "auditor",  "optimizer", "cleaner",
    "driver",    "service",  "worker",   "runner",    "broker",   "agent",    "daemon",    "watcher",
    "courier",   "beacon",   "lantern",  "harbor",    "meadow",   "falcon",   "cobalt",    "granite",
    "quartz",    "willow",   "summit",   "canyon",    "glacier",  "ember",    "horizon",   "orbit",
    "pixel",     "vector",   "matrix",   "nimbus",    "zephyr",   "atlas",    "beacon",    "compass",
};

constexpr const char* kUsers[] = {"alice", "bob",   "carol", "dave",   "erin",  "frank", "grace", "heidi",
                                  "ivan",  "judy",  "mallory", "niaj", "olivia", "peggy", "rupert", "sybil",
                                  "trent", "victor", "walter", "yvonne"};

constexpr const char* kArgs[] = {"--background", "/service", "-k netsvcs", "--type=renderer",
                                 "/quiet",       "-Embedding", "--no-startup-window", "/autostart"};

constexpr const char* kSystemDlls[] = {"ntdll.dll",   "kernel32.dll", "kernelbase.dll", "user32.dll",
                                       "gdi32.dll",   "advapi32.dll", "ole32.dll",      "combase.dll",
                                       "msvcrt.dll",  "ws2_32.dll",   "crypt32.dll",    "shell32.dll",
                                       "sechost.dll", "rpcrt4.dll",   "bcrypt.dll",     "wininet.dll"};

constexpr const char* kHives[] = {"\\REGISTRY\\MACHINE\\SOFTWARE", "\\REGISTRY\\MACHINE\\SYSTEM",
                                  "\\REGISTRY\\USER\\S-1-5-21-3623811015-3361044348-30300820-1001"};

constexpr const char* kRegKeys[] = {"Microsoft\\Windows\\CurrentVersion\\Run",
                                    "Microsoft\\Windows\\CurrentVersion\\RunOnce",
                                    "ControlSet001\\Services\\Tcpip\\Parameters",
                                    "Microsoft\\Windows NT\\CurrentVersion\\Winlogon",
                                    "Software\\Microsoft\\Windows\\CurrentVersion\\Explorer\\RecentDocs",
                                    "Policies\\Microsoft\\Windows Defender"};

constexpr const char* kLmEmpty = "aad3b435b51404eeaad3b435b51404ee";
constexpr const char* kNtEmpty = "31d6cfe0d16ae931b73c59d7e0c089c0";
constexpr std::size_t kImageNameLimit = 14;

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&items)[N]) {
    return items[rng.index(N)];
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string four_digits(Rng& rng) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%04u", static_cast<unsigned>(rng.uniform(0, 9999)));
    return buf;
}

std::string random_hex(Rng& rng, std::size_t len) {
    static const char digits[] = "0123456789abcdef";
    std::string out(len, '0');
    for (auto& c : out) c = digits[rng.uniform(0, 15)];
    return out;
}

Timestamp between(Rng& rng, Timestamp lo, Timestamp hi) {
    auto lo_s = std::chrono::floor<seconds>(lo);
    auto span = std::chrono::floor<seconds>(hi) - lo_s;
    if (span.count() <= 0) return lo_s;
    return lo_s + seconds(rng.uniform_int(0, span.count()));
}

/// Forest in arena form so processes can be attached and detached by index.
struct Arena {
    struct Entry {
        ProcessNode node;  // children left empty
        int parent = -1;
        std::vector<int> kids;
        bool alive = true;
    };
    std::vector<Entry> entries;

    int add(ProcessNode node, int parent) {
        int idx = static_cast<int>(entries.size());
        node.children.clear();
        entries.push_back({std::move(node), parent, {}, true});
        if (parent >= 0) entries[parent].kids.push_back(idx);
        return idx;
    }

    static Arena from_forest(const ProcessForest& forest) {
        Arena a;
        auto walk = [&](auto&& self, const ProcessNode& n, int parent) -> void {
            int idx = a.add(n, parent);
            for (const auto& c : n.children) self(self, c, idx);
        };
        for (const auto& root : forest) walk(walk, root, -1);
        return a;
    }

    ProcessNode assemble(int idx) const {
        ProcessNode n = entries[idx].node;
        for (int k : entries[idx].kids)
            if (entries[k].alive) n.children.push_back(assemble(k));
        return n;
    }

    ProcessForest to_forest() const {
        ProcessForest out;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].parent < 0 && entries[i].alive) out.push_back(assemble(static_cast<int>(i)));
        return out;
    }

    std::vector<int> alive_indices() const {
        std::vector<int> out;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].alive) out.push_back(static_cast<int>(i));
        return out;
    }
};

struct ImageSpec {
    std::string exe;   // "browser-0042.exe"
    std::string path;  // "C:\\Program Files\\Browser\\browser-0042.exe"
    std::string cmd;
};

std::string quote_if_spaced(const std::string& path) {
    return path.find(' ') == std::string::npos ? path : "\"" + path + "\"";
}

ImageSpec random_image(Rng& rng) {
    std::string word = pick(rng, kWords);
    ImageSpec spec;
    spec.exe = word + "-" + four_digits(rng) + ".exe";
    std::string dir;
    switch (rng.uniform(0, 3)) {
        case 0: dir = "C:\\Windows\\System32"; break;
        case 1: dir = "C:\\Program Files\\" + capitalize(pick(rng, kWords)); break;
        case 2: dir = "C:\\Program Files (x86)\\" + capitalize(pick(rng, kWords)); break;
        default: dir = std::string("C:\\Users\\") + pick(rng, kUsers) + "\\AppData\\Local\\" + capitalize(word); break;
    }
    spec.path = dir + "\\" + spec.exe;
    spec.cmd = quote_if_spaced(spec.path);
    if (rng.chance(0.6)) spec.cmd += std::string(" ") + pick(rng, kArgs);
    return spec;
}

std::string audit_for(const std::string& path) {
    // "C:\\X" -> "\\Device\\HarddiskVolume3\\X"
    return "\\Device\\HarddiskVolume3" + (path.size() > 2 && path[1] == ':' ? path.substr(2) : "\\" + path);
}

class Builder {
public:
    Builder(const EmulationConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {}

    Timestamp window_start() const { return cfg_.window_end - cfg_.window; }

    ProcessNode make_process(const ImageSpec& image, const ProcessNode* parent) {
        ProcessNode n;
        n.pid = next_pid_++;
        n.ppid = parent ? parent->pid : cfg_.root_ppid;
        n.image_file_name = image.exe.substr(0, std::min(image.exe.size(), kImageNameLimit));
        n.path = image.path;
        n.audit_path = audit_for(image.path);
        n.cmd = image.cmd;
        n.create_time = between(rng_, parent && parent->create_time ? *parent->create_time : window_start(),
                                cfg_.window_end);
        if (rng_.chance(0.05)) n.exit_time = between(rng_, *n.create_time, cfg_.window_end);
        if (rng_.chance(0.5)) n.handles = rng_.uniform_int(20, 3000);
        n.offset_v = 0xffffa00000000000ULL + rng_.uniform(0, 0x0fffffffffffULL) * 0x40;
        n.session_id = rng_.chance(0.3) ? 0 : 1;
        n.threads = rng_.uniform_int(1, 64);
        n.wow64 = rng_.chance(0.1);
        return n;
    }

    void set_next_pid(std::int64_t pid) { next_pid_ = pid; }

    Arena build_forest(std::size_t n) {
        Arena arena;
        std::size_t roots = 1 + (n - 1) / 10;
        next_pid_ = 1001;
        for (std::size_t i = 0; i < n; ++i) {
            int parent = i < roots ? -1 : static_cast<int>(rng_.index(i));
            const ProcessNode* p = parent < 0 ? nullptr : &arena.entries[parent].node;
            arena.add(make_process(random_image(rng_), p), parent);
        }
        return arena;
    }

    Connection make_connection(const ProcessNode& owner, bool malicious, std::set<std::string>& keys) {
        Connection c;
        c.proto = kAllProtos[rng_.index(4)];
        bool v6 = c.proto == Proto::TCPv6 || c.proto == Proto::UDPv6;
        const auto& list = malicious ? cfg_.malicious_ips : cfg_.benign_ips;
        std::vector<std::string> same_family;
        for (const auto& ip : list) {
            auto parsed = parse_ip(ip);
            if (parsed && (parsed->family == IpFamily::v6) == v6) same_family.push_back(ip);
        }
        c.foreign_addr = same_family.empty() ? rng_.pick(list) : rng_.pick(same_family);
        if (v6) {
            static const std::vector<std::string> locals{"::", "::1", "fe80::1c2d:3e4f:5a6b:7c8d"};
            c.local_addr = rng_.pick(locals);
        } else {
            switch (rng_.uniform(0, 2)) {
                case 0: c.local_addr = "0.0.0.0"; break;
                case 1: c.local_addr = "127.0.0.1"; break;
                default: c.local_addr = "192.168.1." + std::to_string(rng_.uniform(2, 254)); break;
            }
        }
        c.foreign_port = static_cast<std::uint16_t>(rng_.uniform(1024, 65535));
        c.pid = owner.pid;
        c.owner = owner.image_file_name;
        do c.local_port = static_cast<std::uint16_t>(rng_.uniform(1024, 65535));
        while (!keys.insert(connection_key(c).key).second);
        bool tcp = c.proto == Proto::TCPv4 || c.proto == Proto::TCPv6;
        if (tcp) c.state = rng_.pick(valid_connection_states());
        c.created = between(rng_, owner.create_time ? *owner.create_time : window_start(), cfg_.window_end);
        c.offset = rng_.uniform(1, 999999999999999ULL);
        c.seen_by_netstat = true;
        return c;
    }

    Connection make_port_zero(const ProcessNode& owner, std::set<std::string>& keys) {
        Connection c;
        c.proto = Proto::UDPv4;
        c.local_port = 0;
        c.foreign_addr = "*";
        c.foreign_port = 0;
        c.pid = owner.pid;
        c.owner = owner.image_file_name;
        do c.local_addr = "192.168.1." + std::to_string(rng_.uniform(2, 254));
        while (!keys.insert(connection_key(c).key).second);
        c.created = between(rng_, owner.create_time ? *owner.create_time : window_start(), cfg_.window_end);
        c.offset = rng_.uniform(1, 999999999999999ULL);
        c.seen_by_netscan = true;
        return c;
    }

    UserRecord make_user(std::size_t i) {
        static const std::pair<const char*, std::int64_t> builtin[] = {
            {"Administrator", 500}, {"Guest", 501}, {"DefaultAccount", 503}, {"WDAGUtilityAccount", 504}};
        UserRecord u;
        u.lmhash = kLmEmpty;
        if (i < std::size(builtin)) {
            u.user = builtin[i].first;
            u.rid = builtin[i].second;
        } else {
            u.rid = 1000 + static_cast<std::int64_t>(i - std::size(builtin));
            u.user = std::string(pick(rng_, kUsers)) + std::to_string(u.rid);
        }
        u.nthash = (u.rid == 501 || u.rid == 503) ? kNtEmpty : random_hex(rng_, 32);
        return u;
    }

    ModuleRecord make_module(const ProcessNode& owner, std::set<std::string>& keys) {
        ModuleRecord m;
        m.pid = owner.pid;
        m.process = owner.image_file_name;
        m.mapped_path = rng_.chance(0.7) ? std::string("\\Windows\\System32\\") + pick(rng_, kSystemDlls)
                                         : std::string("\\Program Files\\") + capitalize(pick(rng_, kWords)) + "\\" +
                                               pick(rng_, kWords) + ".dll";
        do m.base = 0x7ff800000000ULL + rng_.uniform(0, 0x7fffff) * 0x10000;
        while (!keys.insert(module_key(m).key).second);
        m.in_load = true;
        m.in_init = rng_.chance(0.9);
        m.in_mem = rng_.chance(0.97);
        return m;
    }

    RegistryEntry make_registry(std::set<std::string>& keys) {
        RegistryEntry e;
        e.hive = pick(rng_, kHives);
        e.key_path = pick(rng_, kRegKeys);
        do e.value_name = capitalize(pick(rng_, kWords)) + four_digits(rng_);
        while (!keys.insert(registry_key(e).key).second);
        e.value_data = random_value_data();
        e.last_write = between(rng_, window_start(), cfg_.window_end);
        return e;
    }

    std::string random_value_data() {
        switch (rng_.uniform(0, 2)) {
            case 0: return quote_if_spaced(random_image(rng_).path);
            case 1: return std::to_string(rng_.uniform(0, 1));
            default: return random_hex(rng_, 16);
        }
    }

private:
    const EmulationConfig& cfg_;
    Rng& rng_;
    std::int64_t next_pid_ = 1001;
};

void validate(const EmulationConfig& cfg) {
    auto bad = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
    if (cfg.n_processes == 0) bad("n_processes must be at least 1");
    if (!(cfg.malicious_ratio >= 0.0 && cfg.malicious_ratio <= 1.0)) bad("malicious_ratio must be in [0, 1]");
    if (!(cfg.netscan_coverage >= 0.0 && cfg.netscan_coverage <= 1.0)) bad("netscan_coverage must be in [0, 1]");
    if (cfg.window.count() < 0) bad("window must be non-negative");
    for (const auto* list : {&cfg.benign_ips, &cfg.malicious_ips})
        for (const auto& ip : *list)
            if (!parse_ip(ip)) bad("not an IP address: " + ip);
    std::unordered_set<std::string> malicious;
    for (const auto& ip : cfg.malicious_ips) malicious.insert(canonical_ip(ip));
    for (const auto& ip : cfg.benign_ips)
        if (malicious.contains(canonical_ip(ip))) bad("address on both benign and malicious lists: " + ip);
    if (cfg.n_connections > 0 || cfg.scenario == Scenario::rundll32_process) {
        bool baseline = cfg.scenario == Scenario::baseline;
        double ratio = baseline ? 0.0 : cfg.malicious_ratio;
        if (ratio < 1.0 && cfg.benign_ips.empty()) bad("benign_ips is empty");
        if (ratio > 0.0 && cfg.malicious_ips.empty()) bad("malicious_ips is empty");
    }
    if (cfg.scenario == Scenario::cmdline_ip) {
        bool any_v4 = std::any_of(cfg.malicious_ips.begin(), cfg.malicious_ips.end(), [](const std::string& ip) {
            auto p = parse_ip(ip);
            return p && p->family == IpFamily::v4;
        });
        if (!any_v4) bad("cmdline_ip scenario needs at least one IPv4 malicious address");
    }
}

bool allowlisted(const std::vector<std::string>& allow, const std::string& image) {
    std::string low = image;
    for (auto& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return std::find(allow.begin(), allow.end(), low) != allow.end();
}

ImageSpec system_image(const std::string& exe, std::string cmd) {
    return {exe, "C:\\Windows\\System32\\" + exe, std::move(cmd)};
}

}  // namespace

Corpus generate_corpus(const EmulationConfig& cfg, const std::string& label) {
    validate(cfg);
    Rng rng(cfg.seed);
    Builder b(cfg, rng);
    const bool baseline = cfg.scenario == Scenario::baseline;
    const double ratio = baseline ? 0.0 : cfg.malicious_ratio;

    Arena arena = b.build_forest(cfg.n_processes);
    auto owner_at = [&](std::size_t i) -> const ProcessNode& { return arena.entries[i].node; };

    std::set<std::string> conn_keys;
    std::vector<Connection> conns;
    conns.reserve(cfg.n_connections);
    for (std::size_t i = 0; i < cfg.n_connections; ++i) {
        const auto& owner = owner_at(rng.index(arena.entries.size()));
        bool malicious = rng.chance(ratio);
        conns.push_back(b.make_connection(owner, malicious, conn_keys));
    }
    for (auto& c : conns) c.seen_by_netscan = rng.chance(cfg.netscan_coverage);

    Snapshot s;
    s.label = label;
    std::size_t n_users = cfg.n_users.value_or(6);
    for (std::size_t i = 0; i < n_users; ++i) s.users.push_back(b.make_user(i));
    std::set<std::string> module_keys;
    std::size_t n_modules = cfg.n_modules.value_or(cfg.n_processes);
    for (std::size_t i = 0; i < n_modules; ++i)
        s.modules.push_back(b.make_module(owner_at(rng.index(arena.entries.size())), module_keys));
    std::set<std::string> reg_keys;
    std::size_t n_registry = cfg.n_registry.value_or(cfg.n_processes);
    for (std::size_t i = 0; i < n_registry; ++i) s.registry.push_back(b.make_registry(reg_keys));

    ScenarioManifest manifest;
    manifest.scenario = cfg.scenario;
    manifest.seed = cfg.seed;
    auto& planted = manifest.planted_findings;
    b.set_next_pid(1001 + static_cast<std::int64_t>(cfg.n_processes));

    auto spawn = [&](const ImageSpec& image, int parent) {
        const ProcessNode* p = parent < 0 ? nullptr : &arena.entries[parent].node;
        ProcessNode node = b.make_process(image, p);
        return arena.add(std::move(node), parent);
    };
    auto any_process = [&] { return static_cast<int>(rng.index(cfg.n_processes)); };

    switch (cfg.scenario) {
        case Scenario::baseline: break;
        case Scenario::credential_dump: {
            int dumper = spawn({"procdump.exe", "C:\\Tools\\Sysinternals\\procdump.exe",
                                "procdump -ma lsass.exe lsass_dump"},
                               any_process());
            planted.push_back({RuleId::cred_dump, process_key(arena.entries[dumper].node)});
            if (rng.chance(0.5)) {
                int shell = spawn(system_image("cmd.exe", "C:\\Windows\\system32\\cmd.exe"), any_process());
                auto target = owner_at(rng.index(cfg.n_processes)).pid;
                int r = spawn(system_image("rundll32.exe",
                                           "rundll32.exe C:\\Windows\\System32\\comsvcs.dll, MiniDump " +
                                               std::to_string(target) + " C:\\Windows\\Temp\\x.dmp full"),
                              shell);
                planted.push_back({RuleId::cred_dump, process_key(arena.entries[r].node)});
            }
            break;
        }
        case Scenario::rundll32_process: {
            int shell = spawn({"explorer.exe", "C:\\Windows\\explorer.exe", "C:\\Windows\\Explorer.EXE"},
                              any_process());
            int r = spawn(system_image("rundll32.exe", "C:\\Windows\\System32\\rundll32.exe"), shell);
            auto variant = rng.uniform(0, 2);  // 0: connections, 1: child, 2: both
            if (variant != 1) {
                auto count = rng.uniform(1, 3);
                for (std::uint64_t i = 0; i < count; ++i) {
                    bool malicious = rng.chance(ratio);
                    auto c = b.make_connection(arena.entries[r].node, malicious, conn_keys);
                    c.seen_by_netscan = rng.chance(cfg.netscan_coverage);
                    conns.push_back(std::move(c));
                }
            }
            if (variant != 0) spawn(random_image(rng), r);
            planted.push_back({RuleId::rundll32_no_args, process_key(arena.entries[r].node)});
            break;
        }
        case Scenario::rundll32_child: {
            std::vector<int> candidates;
            for (std::size_t i = 0; i < cfg.n_processes; ++i)
                if (!allowlisted(cfg.rundll32_parent_allowlist, arena.entries[i].node.image_file_name))
                    candidates.push_back(static_cast<int>(i));
            int parent = candidates.empty() ? spawn(random_image(rng), -1) : candidates[rng.index(candidates.size())];
            int r = spawn(system_image("rundll32.exe", "rundll32.exe shell32.dll,Control_RunDLL"), parent);
            planted.push_back({RuleId::rundll32_bad_parent, process_key(arena.entries[r].node)});
            break;
        }
        case Scenario::cmdline_ip: {
            std::vector<std::string> v4;
            for (const auto& ip : cfg.malicious_ips)
                if (parse_ip(ip)->family == IpFamily::v4) v4.push_back(ip);
            auto count = rng.uniform(1, 3);
            for (std::uint64_t i = 0; i < count; ++i) {
                ImageSpec image = random_image(rng);
                image.cmd = quote_if_spaced(image.path) + " --upstream " + rng.pick(v4);
                if (rng.chance(0.5))
                    image.cmd += " --fallback " + rng.pick(v4) + ":" + std::to_string(rng.uniform(1024, 65535));
                int p = spawn(image, any_process());
                planted.push_back({RuleId::cmdline_ip, process_key(arena.entries[p].node)});
            }
            break;
        }
    }

    if (!baseline) {
        for (std::size_t i = 0; i < cfg.port_zero_rows; ++i) {
            auto c = b.make_port_zero(owner_at(rng.index(arena.entries.size())), conn_keys);
            planted.push_back({RuleId::port_zero, connection_key(c)});
            conns.push_back(std::move(c));
        }
        std::unordered_set<std::string> malicious;
        for (const auto& ip : cfg.malicious_ips) malicious.insert(canonical_ip(ip));
        for (const auto& c : conns)
            if (malicious.contains(canonical_ip(c.foreign_addr)))
                planted.push_back({RuleId::malicious_ip, connection_key(c)});
    }
    std::sort(planted.begin(), planted.end());

    s.processes = arena.to_forest();
    s.connections = std::move(conns);

    manifest.processes = count_processes(s.processes);
    manifest.connections = s.connections.size();
    for (const auto& c : s.connections) {
        manifest.netstat_rows += c.seen_by_netstat;
        manifest.netscan_rows += c.seen_by_netscan;
    }
    manifest.users = s.users.size();
    manifest.modules = s.modules.size();
    manifest.registry = s.registry.size();
    return {std::move(s), std::move(manifest)};
}

ProcessForest emulate_pstree(const EmulationConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    Builder b(cfg, rng);
    return b.build_forest(cfg.n_processes).to_forest();
}

std::vector<Connection> emulate_netstat(const EmulationConfig& cfg, const ProcessForest& procs) {
    if (cfg.n_connections == 0) return {};
    if (procs.empty()) throw Error(ErrorKind::InvalidConfig, "no processes to own connections");
    if (cfg.malicious_ratio < 1.0 && cfg.benign_ips.empty())
        throw Error(ErrorKind::InvalidConfig, "benign_ips is empty");
    if (cfg.malicious_ratio > 0.0 && cfg.malicious_ips.empty())
        throw Error(ErrorKind::InvalidConfig, "malicious_ips is empty");
    Rng rng(cfg.seed);
    Builder b(cfg, rng);
    auto flat = flatten(procs);
    std::set<std::string> keys;
    std::vector<Connection> out;
    out.reserve(cfg.n_connections);
    for (std::size_t i = 0; i < cfg.n_connections; ++i) {
        const auto& owner = *flat[rng.index(flat.size())].node;
        bool malicious = rng.chance(cfg.malicious_ratio);
        out.push_back(b.make_connection(owner, malicious, keys));
    }
    return out;
}

namespace {

void write_corpus(const Corpus& corpus, const fs::path& dir) {
    try {
        write_snapshot(corpus.snapshot, dir);
        write_file_atomic(dir / "manifest.json", to_json(corpus.manifest).dump(2) + "\n");
    } catch (const fs::filesystem_error& e) {
        throw Error(ErrorKind::IoError, e.what());
    }
}

}  // namespace

ScenarioManifest emulate_scenario(const EmulationConfig& cfg) {
    if (cfg.out_dir.empty()) throw Error(ErrorKind::InvalidConfig, "out_dir is required");
    Corpus corpus = generate_corpus(cfg);
    write_corpus(corpus, cfg.out_dir);
    return corpus.manifest;
}

EmulationConfig benchmark_config(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw Error(ErrorKind::InvalidConfig, "benchmark scale must be at least 1");
    Rng rng(seed ^ 0xb5ad4eceda1ce2a9ULL);
    EmulationConfig cfg;
    cfg.seed = seed;
    cfg.scenario = Scenario::baseline;
    cfg.n_processes = static_cast<std::size_t>(rng.uniform(n, n + n / 2));
    cfg.n_connections = 2 * n;
    cfg.n_users = n;
    cfg.n_modules = n;
    cfg.n_registry = n;
    return cfg;
}

ScenarioManifest emulate_benchmark(std::size_t n, std::uint64_t seed, const fs::path& out_dir) {
    EmulationConfig cfg = benchmark_config(n, seed);
    cfg.out_dir = out_dir;
    return emulate_scenario(cfg);
}

namespace {

std::size_t churn_count(double churn, std::size_t size) {
    return std::min(size, static_cast<std::size_t>(std::llround(churn * static_cast<double>(size))));
}

template <class T>
void erase_indices(std::vector<T>& rows, const std::vector<std::size_t>& doomed) {
    std::vector<bool> drop(rows.size(), false);
    for (auto i : doomed) drop[i] = true;
    std::size_t w = 0;
    for (std::size_t r = 0; r < rows.size(); ++r)
        if (!drop[r]) {
            if (w != r) rows[w] = std::move(rows[r]);
            ++w;
        }
    rows.resize(w);
}

class Churner {
public:
    Churner(const EmulationConfig& cfg, std::uint64_t seed, const Snapshot& first)
        : cfg_(cfg), rng_(seed), builder_(cfg, rng_) {
        std::int64_t max_pid = 1000;
        for (const auto& fp : flatten(first.processes)) max_pid = std::max(max_pid, fp.node->pid);
        builder_.set_next_pid(max_pid + 1);
        for (const auto& u : first.users) next_rid_ = std::max(next_rid_, u.rid + 1);
    }

    Snapshot step(const Snapshot& prev, double churn, std::string label) {
        Snapshot s = prev;
        s.label = std::move(label);
        churn_processes(s, churn);
        churn_connections(s, churn, prev.connections.size());
        churn_users(s, churn);
        churn_modules(s, churn, prev.modules.size());
        churn_registry(s, churn);
        return s;
    }

private:
    void churn_processes(Snapshot& s, double churn) {
        Arena arena = Arena::from_forest(s.processes);
        std::size_t m = churn_count(churn, arena.entries.size());
        std::unordered_set<std::int64_t> removed;
        for (std::size_t j = 0; j < m; ++j) {
            std::vector<int> leaves;
            for (int i : arena.alive_indices()) {
                const auto& kids = arena.entries[i].kids;
                if (std::none_of(kids.begin(), kids.end(), [&](int k) { return arena.entries[k].alive; }))
                    leaves.push_back(i);
            }
            if (leaves.empty()) break;
            int victim = leaves[rng_.index(leaves.size())];
            arena.entries[victim].alive = false;
            removed.insert(arena.entries[victim].node.pid);
        }
        std::erase_if(s.connections, [&](const Connection& c) { return c.pid && removed.contains(*c.pid); });
        std::erase_if(s.modules, [&](const ModuleRecord& mod) { return removed.contains(mod.pid); });

        auto alive = arena.alive_indices();
        for (auto i : rng_.sample_indices(alive.size(), m)) {
            auto& node = arena.entries[alive[i]].node;
            node.threads = (node.threads - 1 + rng_.uniform_int(1, 63)) % 64 + 1;
        }
        for (std::size_t j = 0; j < m; ++j) {
            int parent = alive.empty() ? -1 : alive[rng_.index(alive.size())];
            const ProcessNode* p = parent < 0 ? nullptr : &arena.entries[parent].node;
            arena.add(builder_.make_process(random_image(rng_), p), parent);
        }
        s.processes = arena.to_forest();
    }

    void churn_connections(Snapshot& s, double churn, std::size_t base) {
        std::size_t m = churn_count(churn, base);
        erase_indices(s.connections, rng_.sample_indices(s.connections.size(), std::min(m, s.connections.size())));
        for (auto i : rng_.sample_indices(s.connections.size(), m)) {
            auto& c = s.connections[i];
            if (c.state) {
                auto states = valid_connection_states();
                std::erase(states, *c.state);
                c.state = rng_.pick(states);
            } else {
                c.created = (c.created ? *c.created : builder_.window_start()) + seconds(rng_.uniform_int(1, 3600));
            }
        }
        auto flat = flatten(s.processes);
        if (!flat.empty()) {
            std::set<std::string> keys;
            for (const auto& c : s.connections) keys.insert(connection_key(c).key);
            std::unordered_set<std::string> malicious;
            for (const auto& ip : cfg_.malicious_ips) malicious.insert(canonical_ip(ip));
            double ratio = cfg_.scenario == Scenario::baseline ? 0.0 : cfg_.malicious_ratio;
            for (std::size_t j = 0; j < m; ++j) {
                const auto& owner = *flat[rng_.index(flat.size())].node;
                auto c = builder_.make_connection(owner, rng_.chance(ratio), keys);
                c.seen_by_netscan = rng_.chance(cfg_.netscan_coverage);
                s.connections.push_back(std::move(c));
            }
        }
        std::stable_partition(s.connections.begin(), s.connections.end(),
                              [](const Connection& c) { return c.seen_by_netstat; });
    }

    void churn_users(Snapshot& s, double churn) {
        std::size_t m = churn_count(churn, s.users.size());
        erase_indices(s.users, rng_.sample_indices(s.users.size(), m));
        for (auto i : rng_.sample_indices(s.users.size(), m)) {
            auto& u = s.users[i];
            std::string fresh;
            do fresh = random_hex(rng_, 32);
            while (fresh == u.nthash);
            u.nthash = fresh;
        }
        for (std::size_t j = 0; j < m; ++j) {
            UserRecord u = builder_.make_user(4);  // first non-builtin slot
            u.rid = next_rid_++;
            u.user = std::string(pick(rng_, kUsers)) + std::to_string(u.rid);
            s.users.push_back(std::move(u));
        }
    }

    void churn_modules(Snapshot& s, double churn, std::size_t base) {
        std::size_t m = churn_count(churn, base);
        erase_indices(s.modules, rng_.sample_indices(s.modules.size(), std::min(m, s.modules.size())));
        for (auto i : rng_.sample_indices(s.modules.size(), m)) s.modules[i].in_init = !s.modules[i].in_init;
        auto flat = flatten(s.processes);
        if (flat.empty()) return;
        std::set<std::string> keys;
        for (const auto& mod : s.modules) keys.insert(module_key(mod).key);
        for (std::size_t j = 0; j < m; ++j)
            s.modules.push_back(builder_.make_module(*flat[rng_.index(flat.size())].node, keys));
    }

    void churn_registry(Snapshot& s, double churn) {
        std::size_t m = churn_count(churn, s.registry.size());
        erase_indices(s.registry, rng_.sample_indices(s.registry.size(), m));
        for (auto i : rng_.sample_indices(s.registry.size(), m)) {
            auto& e = s.registry[i];
            std::string fresh;
            do fresh = builder_.random_value_data();
            while (fresh == e.value_data);
            e.value_data = fresh;
            e.last_write = (e.last_write ? *e.last_write : builder_.window_start()) + seconds(rng_.uniform_int(1, 3600));
        }
        std::set<std::string> keys;
        for (const auto& e : s.registry) keys.insert(registry_key(e).key);
        for (std::size_t j = 0; j < m; ++j) s.registry.push_back(builder_.make_registry(keys));
    }

    const EmulationConfig& cfg_;
    Rng rng_;
    Builder builder_;
    std::int64_t next_rid_ = 1000;
};

std::string sequence_label(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "snap-%03zu", i);
    return buf;
}

}  // namespace

std::vector<Snapshot> generate_sequence(const EmulationConfig& cfg, std::size_t k, double churn) {
    if (k < 2) throw Error(ErrorKind::InvalidConfig, "a sequence needs at least 2 snapshots");
    if (!(churn >= 0.0 && churn <= 1.0)) throw Error(ErrorKind::InvalidConfig, "churn must be in [0, 1]");
    std::vector<Snapshot> out;
    out.reserve(k);
    out.push_back(generate_corpus(cfg, sequence_label(0)).snapshot);
    Churner churner(cfg, cfg.seed ^ 0x9e3779b97f4a7c15ULL, out.front());
    for (std::size_t i = 1; i < k; ++i) out.push_back(churner.step(out.back(), churn, sequence_label(i)));
    return out;
}

std::vector<std::string> emulate_snapshot_sequence(const EmulationConfig& cfg, std::size_t k, double churn,
                                                   const fs::path& out_root) {
    auto snapshots = generate_sequence(cfg, k, churn);
    std::vector<std::string> labels;
    try {
        for (const auto& s : snapshots) {
            write_snapshot(s, out_root / s.label);
            labels.push_back(s.label);
        }
    } catch (const fs::filesystem_error& e) {
        throw Error(ErrorKind::IoError, e.what());
    }
    return labels;
}

}  // namespace spectre
