// SPDX-License-Identifier: Apache-2.0
#include "spectre/anomaly.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"
#include "spectre/ip.hpp"

namespace spectre {

namespace fs = std::filesystem;

std::string_view to_string(RuleId rule) noexcept {
    switch (rule) {
        case RuleId::rundll32_bad_parent: return "RUNDLL32_BAD_PARENT";
        case RuleId::rundll32_no_args: return "RUNDLL32_NO_ARGS";
        case RuleId::cred_dump: return "CRED_DUMP";
        case RuleId::unsafe_extension: return "UNSAFE_EXTENSION";
        case RuleId::malicious_ip: return "MALICIOUS_IP";
        case RuleId::port_zero: return "PORT_ZERO";
        case RuleId::unlinked_module: return "UNLINKED_MODULE";
        case RuleId::cmdline_ip: return "CMDLINE_IP";
    }
    return "UNKNOWN";
}

std::optional<RuleId> parse_rule_id(std::string_view text) noexcept {
    for (auto r : kAllRules)
        if (to_string(r) == text) return r;
    return std::nullopt;
}

std::string_view to_string(Severity severity) noexcept {
    switch (severity) {
        case Severity::low: return "low";
        case Severity::medium: return "medium";
        case Severity::high: return "high";
    }
    return "low";
}

std::optional<Severity> parse_severity(std::string_view text) noexcept {
    if (text == "low") return Severity::low;
    if (text == "medium") return Severity::medium;
    if (text == "high") return Severity::high;
    return std::nullopt;
}

json to_json(const Finding& f) {
    return json{
        {"rule_id", std::string(to_string(f.rule_id))},
        {"severity", std::string(to_string(f.severity))},
        {"subject", {{"class", std::string(to_string(f.subject.cls))}, {"key", json::parse(f.subject.key)}}},
        {"evidence", f.evidence},
        {"snapshot_label", f.snapshot_label},
    };
}

Finding finding_from_json(const json& j) {
    try {
        Finding f;
        auto rule = parse_rule_id(j.at("rule_id").get<std::string>());
        auto sev = parse_severity(j.at("severity").get<std::string>());
        auto cls = parse_entity_class(j.at("subject").at("class").get<std::string>());
        if (!rule || !sev || !cls) throw Error(ErrorKind::SchemaError, "unknown rule, severity or class in finding");
        f.rule_id = *rule;
        f.severity = *sev;
        f.subject = {*cls, j.at("subject").at("key").dump()};
        f.evidence = j.at("evidence").get<std::vector<std::string>>();
        f.snapshot_label = j.at("snapshot_label").get<std::string>();
        return f;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("finding: ") + e.what());
    }
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string describe(const ProcessNode& n) {
    return n.image_file_name + " (PID " + std::to_string(n.pid) + ")";
}

std::string describe(const Connection& c) {
    std::string s = std::string(to_string(c.proto)) + " " + c.local_addr + ":" + std::to_string(c.local_port) + " -> " +
                    c.foreign_addr + ":" + std::to_string(c.foreign_port);
    if (c.state) s += " [" + *c.state + "]";
    return s;
}

/// Lookups shared by all detectors for one snapshot.
struct SnapshotIndex {
    const Snapshot& snapshot;
    std::vector<FlatProcess> flat;
    std::unordered_map<std::int64_t, const ProcessNode*> by_pid;  // first occurrence
    std::unordered_map<std::int64_t, std::vector<const Connection*>> conns_by_pid;

    explicit SnapshotIndex(const Snapshot& s) : snapshot(s), flat(flatten(s.processes)) {
        by_pid.reserve(flat.size());
        for (const auto& fp : flat) by_pid.emplace(fp.node->pid, fp.node);
        for (const auto& c : s.connections)
            if (c.pid) conns_by_pid[*c.pid].push_back(&c);
    }

    const ProcessNode* owner(const Connection& c) const {
        if (!c.pid) return nullptr;
        auto it = by_pid.find(*c.pid);
        return it == by_pid.end() ? nullptr : it->second;
    }

    const std::vector<const Connection*>& connections_of(std::int64_t pid) const {
        static const std::vector<const Connection*> none;
        auto it = conns_by_pid.find(pid);
        return it == conns_by_pid.end() ? none : it->second;
    }
};

Finding make_finding(RuleId rule, Severity sev, EntityKey subject, std::vector<std::string> evidence,
                     const Snapshot& s) {
    return Finding{rule, sev, std::move(subject), std::move(evidence), s.label};
}

std::unordered_set<std::string> ip_set(const std::vector<std::string>& ips) {
    std::unordered_set<std::string> out;
    for (const auto& ip : ips) out.insert(canonical_ip(trim(ip)));
    return out;
}

std::vector<Finding> bad_parent(const SnapshotIndex& idx, const RuleConfig& cfg) {
    std::unordered_set<std::string> allow;
    for (const auto& name : cfg.rundll32_parent_allowlist) allow.insert(lower(name));
    std::vector<Finding> out;
    for (const auto& fp : idx.flat) {
        if (!is_rundll32(*fp.node)) continue;
        if (!fp.parent) {
            out.push_back(make_finding(RuleId::rundll32_bad_parent, Severity::high, process_key(*fp.node),
                                       {describe(*fp.node) + " has no resolvable parent (PPID " +
                                        std::to_string(fp.node->ppid) + " not in process tree)"},
                                       idx.snapshot));
        } else if (!allow.contains(lower(fp.parent->image_file_name))) {
            out.push_back(make_finding(RuleId::rundll32_bad_parent, Severity::high, process_key(*fp.node),
                                       {describe(*fp.node) + " spawned by " + describe(*fp.parent) +
                                        ", which is not an allowed parent"},
                                       idx.snapshot));
        }
    }
    return out;
}

std::vector<Finding> no_args(const SnapshotIndex& idx, const RuleConfig&) {
    std::vector<Finding> out;
    for (const auto& fp : idx.flat) {
        const ProcessNode& n = *fp.node;
        if (!is_rundll32(n) || !lacks_arguments(n)) continue;
        std::vector<std::string> evidence;
        evidence.push_back(describe(n) + " runs without command-line arguments (Cmd: " +
                           (n.cmd ? "\"" + *n.cmd + "\"" : std::string("null")) + ")");
        for (const auto& child : n.children) evidence.push_back("spawned child " + describe(child));
        const auto& conns = idx.connections_of(n.pid);
        for (const auto* c : conns) evidence.push_back("owns connection " + describe(*c));
        auto sev = (!n.children.empty() || !conns.empty()) ? Severity::high : Severity::medium;
        out.push_back(make_finding(RuleId::rundll32_no_args, sev, process_key(n), std::move(evidence), idx.snapshot));
    }
    return out;
}

bool procdump_lsass(const std::vector<std::string>& tokens) {
    bool procdump = false, full_dump = false, lsass = false;
    for (const auto& raw : tokens) {
        auto t = lower(raw);
        auto base = t.substr(t.find_last_of("\\/") == std::string::npos ? 0 : t.find_last_of("\\/") + 1);
        if (base.rfind("procdump", 0) == 0) procdump = true;
        if (t == "-ma" || t == "/ma") full_dump = true;
        if (t.find("lsass") != std::string::npos) lsass = true;
    }
    return procdump && full_dump && lsass;
}

std::vector<Finding> cred_dump(const SnapshotIndex& idx, const RuleConfig&) {
    std::vector<Finding> out;
    for (const auto& fp : idx.flat) {
        const ProcessNode& n = *fp.node;
        if (!n.cmd) continue;
        auto cmd = lower(*n.cmd);
        std::string why;
        if (procdump_lsass(tokenize_cmdline(*n.cmd))) {
            why = "procdump full-memory dump of LSASS";
        } else if (cmd.find("comsvcs") != std::string::npos && cmd.find("minidump") != std::string::npos &&
                   (is_rundll32(n) || cmd.find("rundll32") != std::string::npos)) {
            why = "rundll32 invoking comsvcs.dll MiniDump";
        } else {
            continue;
        }
        out.push_back(make_finding(RuleId::cred_dump, Severity::high, process_key(n),
                                   {describe(n) + ": " + why, "command line: " + *n.cmd}, idx.snapshot));
    }
    return out;
}

std::vector<Finding> unsafe_ext(const SnapshotIndex& idx, const RuleConfig& cfg) {
    std::unordered_set<std::string> executable, unsafe;
    for (const auto& e : cfg.executable_extensions) executable.insert(lower(e));
    for (const auto& e : cfg.unsafe_extensions) unsafe.insert(lower(e));
    std::vector<Finding> out;
    for (const auto& fp : idx.flat) {
        const ProcessNode& n = *fp.node;
        std::string source, where;
        if (n.audit_path && !trim(*n.audit_path).empty()) {
            source = *n.audit_path;
            where = "Audit";
        } else if (n.path && !trim(*n.path).empty()) {
            source = *n.path;
            where = "Path";
        } else if (n.cmd) {
            auto tokens = tokenize_cmdline(*n.cmd);
            if (tokens.empty()) continue;
            source = tokens.front();
            where = "Cmd";
        } else {
            continue;
        }
        auto ext = file_extension(source);
        std::string why;
        if (unsafe.contains(ext))
            why = "extension \"" + ext + "\" is on the unsafe list";
        else if (!executable.contains(ext))
            why = ext.empty() ? "image has no file extension" : "extension \"" + ext + "\" is not an executable type";
        else
            continue;
        out.push_back(make_finding(RuleId::unsafe_extension, Severity::medium, process_key(n),
                                   {describe(n) + " image " + where + " \"" + source + "\": " + why}, idx.snapshot));
    }
    return out;
}

std::vector<Finding> malicious_ip(const SnapshotIndex& idx, const RuleConfig& cfg) {
    auto bad = ip_set(cfg.malicious_ips);
    std::vector<Finding> out;
    if (bad.empty()) return out;
    for (const auto& c : idx.snapshot.connections) {
        if (!bad.contains(canonical_ip(c.foreign_addr))) continue;
        std::vector<std::string> evidence{"foreign address " + c.foreign_addr + " is on the malicious list",
                                          "connection " + describe(c)};
        if (const auto* p = idx.owner(c))
            evidence.push_back("owned by " + describe(*p));
        else if (c.owner)
            evidence.push_back("owner " + *c.owner + " (PID unresolved)");
        out.push_back(make_finding(RuleId::malicious_ip, Severity::high, connection_key(c), std::move(evidence),
                                   idx.snapshot));
    }
    return out;
}

std::vector<Finding> port_zero(const SnapshotIndex& idx, const RuleConfig&) {
    std::vector<Finding> out;
    for (const auto& c : idx.snapshot.connections) {
        if (c.local_port != 0 && c.foreign_port != 0) continue;
        std::vector<std::string> evidence{"port 0 on " + describe(c)};
        if (c.seen_by_netscan && !c.seen_by_netstat) evidence.push_back("seen only by netscan");
        out.push_back(make_finding(RuleId::port_zero, Severity::medium, connection_key(c), std::move(evidence),
                                   idx.snapshot));
    }
    return out;
}

std::vector<Finding> unlinked_module(const SnapshotIndex& idx, const RuleConfig&) {
    std::vector<Finding> out;
    for (const auto& m : idx.snapshot.modules) {
        if (m.in_load || m.in_init || m.in_mem || !m.mapped_path || m.mapped_path->empty()) continue;
        out.push_back(make_finding(RuleId::unlinked_module, Severity::medium, module_key(m),
                                   {*m.mapped_path + " mapped in " + m.process + " (PID " + std::to_string(m.pid) +
                                    ") but absent from InLoad, InInit and InMem lists"},
                                   idx.snapshot));
    }
    return out;
}

std::vector<Finding> cmdline_ip(const SnapshotIndex& idx, const RuleConfig& cfg) {
    auto bad = ip_set(cfg.malicious_ips);
    std::vector<Finding> out;
    for (const auto& fp : idx.flat) {
        const ProcessNode& n = *fp.node;
        if (!n.cmd) continue;
        auto literals = extract_ip_literals(*n.cmd, cfg.cmdline_ipv6);
        if (literals.empty()) continue;
        Severity sev = Severity::low;
        std::vector<std::string> evidence;
        std::set<std::string> seen;
        for (const auto& lit : literals) {
            if (!seen.insert(lit.address).second) continue;
            bool malicious = bad.contains(canonical_ip(lit.address));
            if (malicious) sev = Severity::high;
            evidence.push_back(std::string(malicious ? "malicious" : "unlisted") + " address " + lit.address +
                               " in token \"" + lit.token + "\" of " + describe(n));
        }
        out.push_back(make_finding(RuleId::cmdline_ip, sev, process_key(n), std::move(evidence), idx.snapshot));
    }
    return out;
}

using Detector = std::vector<Finding> (*)(const SnapshotIndex&, const RuleConfig&);

Detector detector_for(RuleId rule) {
    switch (rule) {
        case RuleId::rundll32_bad_parent: return bad_parent;
        case RuleId::rundll32_no_args: return no_args;
        case RuleId::cred_dump: return cred_dump;
        case RuleId::unsafe_extension: return unsafe_ext;
        case RuleId::malicious_ip: return malicious_ip;
        case RuleId::port_zero: return port_zero;
        case RuleId::unlinked_module: return unlinked_module;
        case RuleId::cmdline_ip: return cmdline_ip;
    }
    return bad_parent;
}

std::vector<Finding> run_one(RuleId rule, const Snapshot& s, const RuleConfig& cfg) {
    SnapshotIndex idx(s);
    return detector_for(rule)(idx, cfg);
}

std::vector<std::string> lowered_list(const json& j, std::string_view key, bool extension) {
    std::vector<std::string> out;
    for (const auto& v : j.at(std::string(key))) {
        if (!v.is_string()) throw Error(ErrorKind::InvalidConfig, std::string(key) + ": expected strings");
        auto s = lower(trim(v.get<std::string>()));
        if (extension && (s.empty() || s.front() != '.'))
            throw Error(ErrorKind::InvalidConfig, std::string(key) + ": extension \"" + s + "\" must start with '.'");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

bool is_rundll32(const ProcessNode& node) { return lower(node.image_file_name) == "rundll32.exe"; }

bool lacks_arguments(const ProcessNode& node) {
    if (!node.cmd) return true;
    return tokenize_cmdline(*node.cmd).size() <= 1;
}

std::vector<std::string> tokenize_cmdline(std::string_view cmd) {
    std::vector<std::string> tokens;
    std::string cur;
    bool in_quotes = false, have = false;
    for (char c : cmd) {
        if (c == '"') {
            in_quotes = !in_quotes;
            have = true;
        } else if (!in_quotes && std::isspace(static_cast<unsigned char>(c))) {
            if (have) tokens.push_back(std::move(cur));
            cur.clear();
            have = false;
        } else {
            cur += c;
            have = true;
        }
    }
    if (have) tokens.push_back(std::move(cur));
    // `""` alone is an empty token, not an argument
    std::erase_if(tokens, [](const std::string& t) { return t.empty(); });
    return tokens;
}

std::string file_extension(std::string_view path) {
    auto s = trim(path);
    while (!s.empty() && (s.back() == '"' || s.back() == '\'')) s.pop_back();
    auto sep = s.find_last_of("\\/");
    auto name = sep == std::string::npos ? s : s.substr(sep + 1);
    auto dot = name.find_last_of('.');
    if (dot == std::string::npos || dot + 1 == name.size()) return {};
    return lower(name.substr(dot));
}

std::vector<IpLiteral> extract_ip_literals(std::string_view text, bool include_v6) {
    std::vector<IpLiteral> out;
    auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
    auto token_around = [&](std::size_t b, std::size_t e) {
        std::size_t tb = b, te = e;
        while (tb > 0 && !std::isspace(static_cast<unsigned char>(text[tb - 1]))) --tb;
        while (te < text.size() && !std::isspace(static_cast<unsigned char>(text[te]))) ++te;
        return std::string(text.substr(tb, te - tb));
    };

    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i]) || (i > 0 && (is_digit(text[i - 1]) || text[i - 1] == '.'))) {
            ++i;
            continue;
        }
        // maximal run of digits and dots starting here
        std::size_t j = i;
        while (j < text.size() && (is_digit(text[j]) || text[j] == '.')) ++j;
        std::size_t end = j;
        while (end > i && text[end - 1] == '.') --end;  // sentence-final dot
        std::string_view run = text.substr(i, end - i);
        int parts = 0;
        bool ok = true;
        std::size_t p = 0;
        while (ok && p <= run.size()) {
            auto q = run.find('.', p);
            if (q == std::string_view::npos) q = run.size();
            auto part = run.substr(p, q - p);
            if (part.empty() || part.size() > 3) ok = false;
            else if (std::stoi(std::string(part)) > 255) ok = false;
            ++parts;
            p = q + 1;
        }
        if (ok && parts == 4) out.push_back({std::string(run), token_around(i, end)});
        i = j;
    }

    if (include_v6) {
        auto is_v6_char = [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) || c == ':' || c == '.'; };
        std::size_t k = 0;
        while (k < text.size()) {
            if (!is_v6_char(text[k])) {
                ++k;
                continue;
            }
            std::size_t e = k;
            while (e < text.size() && is_v6_char(text[e])) ++e;
            auto cand = text.substr(k, e - k);
            if (std::count(cand.begin(), cand.end(), ':') >= 2) {
                auto ip = parse_ip(cand);
                if (ip && ip->family == IpFamily::v6) out.push_back({std::string(cand), token_around(k, e)});
            }
            k = e;
        }
    }
    return out;
}

RuleConfig RuleConfig::defaults() {
    RuleConfig cfg;
    cfg.rundll32_parent_allowlist = {"explorer.exe",   "svchost.exe", "services.exe", "cmd.exe",
                                     "powershell.exe", "msiexec.exe", "control.exe"};
    cfg.executable_extensions = {".exe"};
    cfg.unsafe_extensions = {".img", ".txt", ".log", ".png", ".jpg", ".jpeg", ".dll", ".scr"};
    return cfg;
}

json to_json(const RuleConfig& cfg) {
    return json{
        {"rundll32_parent_allowlist", cfg.rundll32_parent_allowlist},
        {"executable_extensions", cfg.executable_extensions},
        {"unsafe_extensions", cfg.unsafe_extensions},
        {"malicious_ips", cfg.malicious_ips},
        {"benign_ips", cfg.benign_ips},
        {"cmdline_ipv6", cfg.cmdline_ipv6},
    };
}

RuleConfig rule_config_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
    RuleConfig cfg = RuleConfig::defaults();
    try {
        if (j.contains("rundll32_parent_allowlist"))
            cfg.rundll32_parent_allowlist = lowered_list(j, "rundll32_parent_allowlist", false);
        if (j.contains("executable_extensions")) cfg.executable_extensions = lowered_list(j, "executable_extensions", true);
        if (j.contains("unsafe_extensions")) cfg.unsafe_extensions = lowered_list(j, "unsafe_extensions", true);
        if (j.contains("malicious_ips")) cfg.malicious_ips = j.at("malicious_ips").get<std::vector<std::string>>();
        if (j.contains("benign_ips")) cfg.benign_ips = j.at("benign_ips").get<std::vector<std::string>>();
        if (j.contains("cmdline_ipv6")) cfg.cmdline_ipv6 = j.at("cmdline_ipv6").get<bool>();
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
        if (j.contains("malicious_ips_file"))
            for (auto& ip : load_ip_list(resolve(j.at("malicious_ips_file").get<std::string>())))
                cfg.malicious_ips.push_back(std::move(ip));
        if (j.contains("benign_ips_file"))
            for (auto& ip : load_ip_list(resolve(j.at("benign_ips_file").get<std::string>())))
                cfg.benign_ips.push_back(std::move(ip));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, e.what());
    }
    return cfg;
}

RuleConfig load_rule_config(const fs::path& path) {
    std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
    return rule_config_from_json(j, path.parent_path());
}

std::vector<std::string> load_ip_list(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto ip = trim(line);
        if (!ip.empty()) out.push_back(std::move(ip));
    }
    return out;
}

std::vector<Finding> detect_rundll32_bad_parent(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::rundll32_bad_parent, s, cfg);
}
std::vector<Finding> detect_rundll32_no_args(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::rundll32_no_args, s, cfg);
}
std::vector<Finding> detect_credential_dump(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::cred_dump, s, cfg);
}
std::vector<Finding> detect_unsafe_extension(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::unsafe_extension, s, cfg);
}
std::vector<Finding> detect_malicious_ip(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::malicious_ip, s, cfg);
}
std::vector<Finding> detect_port_zero(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::port_zero, s, cfg);
}
std::vector<Finding> detect_unlinked_module(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::unlinked_module, s, cfg);
}
std::vector<Finding> detect_cmdline_ip(const Snapshot& s, const RuleConfig& cfg) {
    return run_one(RuleId::cmdline_ip, s, cfg);
}

void sort_findings(std::vector<Finding>& findings) {
    std::stable_sort(findings.begin(), findings.end(), [](const Finding& a, const Finding& b) {
        if (a.rule_id != b.rule_id) return a.rule_id < b.rule_id;
        return a.subject < b.subject;
    });
}

std::vector<Finding> run_all(const Snapshot& s, const RuleConfig& cfg) {
    SnapshotIndex idx(s);
    std::vector<Finding> all;
    for (auto rule : kAllRules) {
        auto found = detector_for(rule)(idx, cfg);
        all.insert(all.end(), std::make_move_iterator(found.begin()), std::make_move_iterator(found.end()));
    }
    sort_findings(all);
    return all;
}

}  // namespace spectre
