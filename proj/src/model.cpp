// SPDX-License-Identifier: Apache-2.0
#include "spectre/model.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>
#include <utility>

#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"

namespace spectre {

namespace fs = std::filesystem;

std::string_view to_string(Proto proto) noexcept {
    switch (proto) {
        case Proto::TCPv4: return "TCPv4";
        case Proto::TCPv6: return "TCPv6";
        case Proto::UDPv4: return "UDPv4";
        case Proto::UDPv6: return "UDPv6";
    }
    return "TCPv4";
}

std::optional<Proto> parse_proto(std::string_view text) noexcept {
    if (text == "TCPv4") return Proto::TCPv4;
    if (text == "TCPv6") return Proto::TCPv6;
    if (text == "UDPv4") return Proto::UDPv4;
    if (text == "UDPv6") return Proto::UDPv6;
    return std::nullopt;
}

std::string_view to_string(EntityClass cls) noexcept {
    switch (cls) {
        case EntityClass::processes: return "processes";
        case EntityClass::connections: return "connections";
        case EntityClass::users: return "users";
        case EntityClass::modules: return "modules";
        case EntityClass::registry: return "registry";
    }
    return "processes";
}

std::optional<EntityClass> parse_entity_class(std::string_view text) noexcept {
    for (auto cls : kAllEntityClasses)
        if (to_string(cls) == text) return cls;
    return std::nullopt;
}

namespace {

json parse_document(std::string_view text) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::MalformedJson, "$: " + std::string(e.what()));
    }
}

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
    throw Error(ErrorKind::SchemaError, path + ": " + what);
}

const json& top_level_array(const json& doc) {
    if (!doc.is_array()) schema_error("$", "expected a top-level array");
    return doc;
}

/// Typed, path-aware accessors over one JSON object.
class FieldReader {
public:
    FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) schema_error(path_, "expected an object");
    }

    const std::string& path() const { return path_; }
    std::string at(std::string_view key) const { return path_ + "." + std::string(key); }

    const json* find(std::string_view key) const {
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    std::int64_t required_int(std::string_view key) const {
        const json* v = find(key);
        if (!v) schema_error(at(key), "missing required key");
        return as_int(*v, key);
    }

    std::optional<std::int64_t> optional_int(std::string_view key) const {
        const json* v = find(key);
        if (!v || v->is_null()) return std::nullopt;
        return as_int(*v, key);
    }

    std::uint64_t unsigned_or(std::string_view key, std::uint64_t fallback) const {
        const json* v = find(key);
        if (!v || v->is_null()) return fallback;
        if (v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
        schema_error(at(key), "expected a non-negative integer");
    }

    std::string required_string(std::string_view key) const {
        const json* v = find(key);
        if (!v) schema_error(at(key), "missing required key");
        if (!v->is_string()) schema_error(at(key), "expected a string");
        return v->get<std::string>();
    }

    std::optional<std::string> optional_string(std::string_view key) const {
        const json* v = find(key);
        if (!v || v->is_null()) return std::nullopt;
        if (!v->is_string()) schema_error(at(key), "expected a string or null");
        return v->get<std::string>();
    }

    bool required_bool(std::string_view key) const {
        const json* v = find(key);
        if (!v) schema_error(at(key), "missing required key");
        if (!v->is_boolean()) schema_error(at(key), "expected a boolean");
        return v->get<bool>();
    }

    bool bool_or(std::string_view key, bool fallback) const {
        const json* v = find(key);
        if (!v || v->is_null()) return fallback;
        if (!v->is_boolean()) schema_error(at(key), "expected a boolean");
        return v->get<bool>();
    }

    std::optional<Timestamp> optional_time(std::string_view key) const {
        auto text = optional_string(key);
        if (!text) return std::nullopt;
        auto ts = parse_timestamp(*text);
        if (!ts) schema_error(at(key), "not an ISO-8601 timestamp: \"" + *text + "\"");
        return ts;
    }

    std::uint16_t required_port(std::string_view key) const {
        auto v = required_int(key);
        if (v < 0 || v > 65535) schema_error(at(key), "port out of range: " + std::to_string(v));
        return static_cast<std::uint16_t>(v);
    }

private:
    std::int64_t as_int(const json& v, std::string_view key) const {
        if (v.is_number_unsigned()) {
            auto u = v.get<std::uint64_t>();
            if (u > static_cast<std::uint64_t>(INT64_MAX)) schema_error(at(key), "integer out of range");
            return static_cast<std::int64_t>(u);
        }
        if (!v.is_number_integer()) schema_error(at(key), "expected an integer");
        return v.get<std::int64_t>();
    }

    const json& obj_;
    std::string path_;
};

std::string index_path(const std::string& base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
}

ProcessNode parse_process(const json& obj, const std::string& path) {
    FieldReader r(obj, path);
    ProcessNode node;
    node.pid = r.required_int("PID");
    node.ppid = r.required_int("PPID");
    if (node.pid < 0) schema_error(r.at("PID"), "negative pid");
    node.image_file_name = r.optional_string("ImageFileName").value_or("");
    node.audit_path = r.optional_string("Audit");
    node.cmd = r.optional_string("Cmd");
    node.path = r.optional_string("Path");
    node.create_time = r.optional_time("CreateTime");
    node.exit_time = r.optional_time("ExitTime");
    node.handles = r.optional_int("Handles");
    node.offset_v = r.unsigned_or("Offset(V)", 0);
    node.session_id = r.optional_int("SessionId");
    node.threads = r.optional_int("Threads").value_or(0);
    if (node.threads < 0) schema_error(r.at("Threads"), "negative thread count");
    node.wow64 = r.bool_or("Wow64", false);
    if (node.create_time && node.exit_time && *node.exit_time < *node.create_time)
        schema_error(r.at("ExitTime"), "exit time precedes create time");

    if (const json* kids = r.find("__children"); kids && !kids->is_null()) {
        if (!kids->is_array()) schema_error(r.at("__children"), "expected an array");
        node.children.reserve(kids->size());
        for (std::size_t i = 0; i < kids->size(); ++i) {
            auto child_path = index_path(r.at("__children"), i);
            node.children.push_back(parse_process((*kids)[i], child_path));
            if (node.children.back().ppid != node.pid)
                schema_error(child_path + ".PPID", "child PPID " + std::to_string(node.children.back().ppid) +
                                                       " does not match parent PID " + std::to_string(node.pid));
        }
    }
    return node;
}

void check_unique_process_ids(const ProcessForest& forest) {
    std::set<std::pair<std::int64_t, std::optional<std::int64_t>>> seen;
    for (const auto& fp : flatten(forest)) {
        std::optional<std::int64_t> ct;
        if (fp.node->create_time) ct = fp.node->create_time->time_since_epoch().count();
        if (!seen.emplace(fp.node->pid, ct).second)
            schema_error("$", "duplicate process (PID " + std::to_string(fp.node->pid) + ", CreateTime " +
                                  (fp.node->create_time ? format_timestamp(*fp.node->create_time) : "null") + ")");
    }
}

template <class T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

json optional_time_json(const std::optional<Timestamp>& ts) {
    return ts ? json(format_timestamp(*ts)) : json(nullptr);
}

bool is_hex32(std::string_view s) {
    return s.size() == 32 && std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

template <class T, class Fn>
std::vector<T> parse_rows(std::string_view text, Fn&& parse_one) {
    json doc = parse_document(text);
    const json& rows = top_level_array(doc);
    std::vector<T> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(parse_one(FieldReader(rows[i], index_path("$", i))));
    return out;
}

template <class Range>
std::string dump_rows(const Range& rows) {
    json arr = json::array();
    for (const auto& row : rows) arr.push_back(to_volatility_json(row));
    return arr.dump(2) + "\n";
}

}  // namespace

ProcessForest parse_pstree(std::string_view json_text) {
    json doc = parse_document(json_text);
    const json& rows = top_level_array(doc);
    ProcessForest forest;
    forest.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) forest.push_back(parse_process(rows[i], index_path("$", i)));
    check_unique_process_ids(forest);
    return forest;
}

std::vector<Connection> parse_connections(std::string_view json_text, SourcePlugin source) {
    return parse_rows<Connection>(json_text, [source](const FieldReader& r) {
        Connection c;
        auto proto_text = r.required_string("Proto");
        auto proto = parse_proto(proto_text);
        if (!proto) schema_error(r.at("Proto"), "unrecognized protocol \"" + proto_text + "\"");
        c.proto = *proto;
        c.local_addr = r.required_string("LocalAddr");
        c.local_port = r.required_port("LocalPort");
        c.foreign_addr = r.required_string("ForeignAddr");
        c.foreign_port = r.required_port("ForeignPort");
        c.state = r.optional_string("State");
        c.pid = r.optional_int("PID");
        c.owner = r.optional_string("Owner");
        c.created = r.optional_time("Created");
        c.offset = r.unsigned_or("Offset", 0);
        c.seen_by_netstat = source == SourcePlugin::netstat;
        c.seen_by_netscan = source == SourcePlugin::netscan;
        return c;
    });
}

std::vector<UserRecord> parse_hashdump(std::string_view json_text) {
    return parse_rows<UserRecord>(json_text, [](const FieldReader& r) {
        UserRecord u;
        u.user = r.required_string("User");
        u.rid = r.required_int("rid");
        if (u.rid < 0) schema_error(r.at("rid"), "negative rid");
        u.lmhash = r.required_string("lmhash");
        u.nthash = r.required_string("nthash");
        if (!is_hex32(u.lmhash)) schema_error(r.at("lmhash"), "expected 32 hex characters");
        if (!is_hex32(u.nthash)) schema_error(r.at("nthash"), "expected 32 hex characters");
        u.lmhash = lower(std::move(u.lmhash));
        u.nthash = lower(std::move(u.nthash));
        return u;
    });
}

std::vector<ModuleRecord> parse_ldrmodules(std::string_view json_text) {
    return parse_rows<ModuleRecord>(json_text, [](const FieldReader& r) {
        ModuleRecord m;
        m.pid = r.required_int("Pid");
        if (m.pid < 0) schema_error(r.at("Pid"), "negative pid");
        m.process = r.required_string("Process");
        if (!r.find("Base")) schema_error(r.at("Base"), "missing required key");
        m.base = r.unsigned_or("Base", 0);
        m.mapped_path = r.optional_string("MappedPath");
        m.in_load = r.required_bool("InLoad");
        m.in_init = r.required_bool("InInit");
        m.in_mem = r.required_bool("InMem");
        return m;
    });
}

std::vector<RegistryEntry> parse_registry(std::string_view json_text) {
    return parse_rows<RegistryEntry>(json_text, [](const FieldReader& r) {
        RegistryEntry e;
        e.hive = r.required_string("hive");
        e.key_path = r.required_string("key_path");
        if (e.key_path.empty()) schema_error(r.at("key_path"), "empty key path");
        e.value_name = r.required_string("value_name");
        e.value_data = r.required_string("value_data");
        e.last_write = r.optional_time("last_write");
        return e;
    });
}

json to_volatility_json(const ProcessNode& node) {
    json children = json::array();
    for (const auto& child : node.children) children.push_back(to_volatility_json(child));
    return json{
        {"Audit", optional_json(node.audit_path)},
        {"Cmd", optional_json(node.cmd)},
        {"CreateTime", optional_time_json(node.create_time)},
        {"ExitTime", optional_time_json(node.exit_time)},
        {"Handles", optional_json(node.handles)},
        {"ImageFileName", node.image_file_name},
        {"Offset(V)", node.offset_v},
        {"PID", node.pid},
        {"PPID", node.ppid},
        {"Path", optional_json(node.path)},
        {"SessionId", optional_json(node.session_id)},
        {"Threads", node.threads},
        {"Wow64", node.wow64},
        {"__children", std::move(children)},
    };
}

json to_volatility_json(const Connection& c) {
    return json{
        {"Created", optional_time_json(c.created)},
        {"ForeignAddr", c.foreign_addr},
        {"ForeignPort", c.foreign_port},
        {"LocalAddr", c.local_addr},
        {"LocalPort", c.local_port},
        {"Offset", c.offset},
        {"Owner", optional_json(c.owner)},
        {"PID", optional_json(c.pid)},
        {"Proto", std::string(to_string(c.proto))},
        {"State", optional_json(c.state)},
        {"__children", json::array()},
    };
}

json to_volatility_json(const UserRecord& u) {
    return json{
        {"User", u.user}, {"__children", json::array()}, {"lmhash", u.lmhash}, {"nthash", u.nthash}, {"rid", u.rid},
    };
}

json to_volatility_json(const ModuleRecord& m) {
    return json{
        {"Base", m.base},         {"InInit", m.in_init},         {"InLoad", m.in_load},
        {"InMem", m.in_mem},      {"MappedPath", optional_json(m.mapped_path)},
        {"Pid", m.pid},           {"Process", m.process},        {"__children", json::array()},
    };
}

json to_volatility_json(const RegistryEntry& e) {
    return json{
        {"hive", e.hive},
        {"key_path", e.key_path},
        {"last_write", optional_time_json(e.last_write)},
        {"value_data", e.value_data},
        {"value_name", e.value_name},
    };
}

std::string serialize_pstree(const ProcessForest& forest) { return dump_rows(forest); }
std::string serialize_connections(std::span<const Connection> rows) { return dump_rows(rows); }
std::string serialize_hashdump(std::span<const UserRecord> users) { return dump_rows(users); }
std::string serialize_ldrmodules(std::span<const ModuleRecord> modules) { return dump_rows(modules); }
std::string serialize_registry(std::span<const RegistryEntry> entries) { return dump_rows(entries); }

std::vector<Connection> merge_connections(std::span<const Connection> netstat, std::span<const Connection> netscan) {
    std::vector<Connection> merged;
    merged.reserve(netstat.size() + netscan.size());
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(netstat.size() + netscan.size());

    auto absorb = [&](const Connection& row) {
        auto [it, inserted] = index.emplace(connection_key(row).key, merged.size());
        if (inserted) {
            merged.push_back(row);
            return;
        }
        Connection& kept = merged[it->second];
        kept.seen_by_netstat = kept.seen_by_netstat || row.seen_by_netstat;
        kept.seen_by_netscan = kept.seen_by_netscan || row.seen_by_netscan;
        if (!kept.state) kept.state = row.state;
        if (!kept.owner) kept.owner = row.owner;
        if (!kept.created) kept.created = row.created;
        if (kept.offset == 0) kept.offset = row.offset;
    };
    for (const auto& row : netstat) absorb(row);
    for (const auto& row : netscan) absorb(row);
    return merged;
}

namespace {

template <class Rows, class KeyFn>
void check_unique(const Rows& rows, KeyFn&& key_of, const char* file) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto key = key_of(rows[i]).key;
        if (!seen.insert(key).second)
            throw Error(ErrorKind::SchemaError,
                        std::string(file) + ": " + index_path("$", i) + ": duplicate entity key " + key);
    }
}

template <class Fn>
auto load_section(const fs::path& dir, const char* file, Fn&& parse) -> decltype(parse(std::string_view{})) {
    fs::path p = dir / file;
    std::error_code ec;
    if (!fs::exists(p, ec)) return {};
    std::string text = read_file(p);
    try {
        return parse(std::string_view(text));
    } catch (const Error& e) {
        throw e.annotated(file);
    }
}

}  // namespace

Snapshot load_snapshot(const fs::path& dir, const std::string& label) {
    if (label.empty()) throw Error(ErrorKind::InvalidConfig, "snapshot label must be non-empty");
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw Error(ErrorKind::IoError, "not a directory: " + dir.string());

    Snapshot s;
    s.label = label;
    s.processes = load_section(dir, snapshot_files::pstree, parse_pstree);
    auto netstat = load_section(dir, snapshot_files::netstat,
                                [](std::string_view t) { return parse_connections(t, SourcePlugin::netstat); });
    auto netscan = load_section(dir, snapshot_files::netscan,
                                [](std::string_view t) { return parse_connections(t, SourcePlugin::netscan); });
    check_unique(netstat, connection_key, snapshot_files::netstat);
    check_unique(netscan, connection_key, snapshot_files::netscan);
    s.connections = merge_connections(netstat, netscan);
    s.users = load_section(dir, snapshot_files::hashdump, parse_hashdump);
    check_unique(s.users, user_key, snapshot_files::hashdump);
    s.modules = load_section(dir, snapshot_files::ldrmodules, parse_ldrmodules);
    check_unique(s.modules, module_key, snapshot_files::ldrmodules);
    s.registry = load_section(dir, snapshot_files::registry, parse_registry);
    check_unique(s.registry, registry_key, snapshot_files::registry);
    return s;
}

void write_snapshot(const Snapshot& s, const fs::path& dir) {
    std::vector<Connection> netstat, netscan;
    for (const auto& c : s.connections) {
        if (c.seen_by_netstat) netstat.push_back(c);
        if (c.seen_by_netscan) netscan.push_back(c);
    }
    write_file_atomic(dir / snapshot_files::pstree, serialize_pstree(s.processes));
    write_file_atomic(dir / snapshot_files::netstat, serialize_connections(netstat));
    write_file_atomic(dir / snapshot_files::netscan, serialize_connections(netscan));
    write_file_atomic(dir / snapshot_files::hashdump, serialize_hashdump(s.users));
    write_file_atomic(dir / snapshot_files::ldrmodules, serialize_ldrmodules(s.modules));
    write_file_atomic(dir / snapshot_files::registry, serialize_registry(s.registry));
}

std::vector<FlatProcess> flatten(const ProcessForest& forest) {
    std::vector<FlatProcess> out;
    std::vector<FlatProcess> stack;
    for (auto it = forest.rbegin(); it != forest.rend(); ++it) stack.push_back({&*it, nullptr, 0});
    while (!stack.empty()) {
        FlatProcess cur = stack.back();
        stack.pop_back();
        out.push_back(cur);
        const auto& kids = cur.node->children;
        for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back({&*it, cur.node, cur.depth + 1});
    }
    return out;
}

std::size_t count_processes(const ProcessForest& forest) {
    std::size_t n = 0;
    for (const auto& node : forest) n += 1 + count_processes(node.children);
    return n;
}

EntityKey process_key(const ProcessNode& n) {
    return {EntityClass::processes, json::array({n.pid, optional_time_json(n.create_time), n.image_file_name}).dump()};
}

EntityKey connection_key(const Connection& c) {
    return {EntityClass::connections, json::array({std::string(to_string(c.proto)), c.local_addr, c.local_port,
                                                   c.foreign_addr, c.foreign_port, optional_json(c.pid)})
                                          .dump()};
}

EntityKey user_key(const UserRecord& u) { return {EntityClass::users, json::array({u.rid}).dump()}; }

EntityKey module_key(const ModuleRecord& m) {
    return {EntityClass::modules, json::array({m.pid, optional_json(m.mapped_path), m.base}).dump()};
}

EntityKey registry_key(const RegistryEntry& e) {
    return {EntityClass::registry, json::array({e.hive, e.key_path, e.value_name}).dump()};
}

std::size_t entity_count(const Snapshot& s, EntityClass cls) {
    switch (cls) {
        case EntityClass::processes: return count_processes(s.processes);
        case EntityClass::connections: return s.connections.size();
        case EntityClass::users: return s.users.size();
        case EntityClass::modules: return s.modules.size();
        case EntityClass::registry: return s.registry.size();
    }
    return 0;
}

}  // namespace spectre
