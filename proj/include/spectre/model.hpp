// SPDX-License-Identifier: Apache-2.0
//
// Snapshot domain types and parsers for Volatility 3 JSON plugin output
// (`vol -r json windows.pstree` etc.). Key names are matched byte-exactly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "spectre/timestamp.hpp"

namespace spectre {

using json = nlohmann::json;

enum class Proto { TCPv4, TCPv6, UDPv4, UDPv6 };

std::string_view to_string(Proto proto) noexcept;
std::optional<Proto> parse_proto(std::string_view text) noexcept;
inline constexpr Proto kAllProtos[] = {Proto::UDPv4, Proto::UDPv6, Proto::TCPv4, Proto::TCPv6};

/// One pstree record. `children` hold processes whose PPID is this PID.
struct ProcessNode {
    std::int64_t pid = 0;
    std::int64_t ppid = 0;
    std::string image_file_name;
    std::optional<std::string> audit_path;  // "Audit"
    std::optional<std::string> cmd;         // "Cmd"
    std::optional<std::string> path;        // "Path"
    std::optional<Timestamp> create_time;
    std::optional<Timestamp> exit_time;
    std::optional<std::int64_t> handles;
    std::uint64_t offset_v = 0;  // "Offset(V)"
    std::optional<std::int64_t> session_id;
    std::int64_t threads = 0;
    bool wow64 = false;
    std::vector<ProcessNode> children;  // "__children"

    bool operator==(const ProcessNode&) const = default;
};

using ProcessForest = std::vector<ProcessNode>;

/// One netstat/netscan row with provenance.
struct Connection {
    Proto proto = Proto::TCPv4;
    std::string local_addr;
    std::uint16_t local_port = 0;
    std::string foreign_addr;
    std::uint16_t foreign_port = 0;
    std::optional<std::string> state;
    std::optional<std::int64_t> pid;
    std::optional<std::string> owner;
    std::optional<Timestamp> created;
    std::uint64_t offset = 0;
    bool seen_by_netstat = false;
    bool seen_by_netscan = false;

    bool operator==(const Connection&) const = default;
};

/// One hashdump row. Hashes are 32 lowercase hex characters.
struct UserRecord {
    std::string user;
    std::int64_t rid = 0;
    std::string lmhash;
    std::string nthash;

    bool operator==(const UserRecord&) const = default;
};

/// One ldrmodules row: membership of a mapped image in the three PEB lists.
struct ModuleRecord {
    std::int64_t pid = 0;
    std::string process;
    std::uint64_t base = 0;
    std::optional<std::string> mapped_path;
    bool in_load = false;
    bool in_init = false;
    bool in_mem = false;

    bool operator==(const ModuleRecord&) const = default;
};

/// One registry value. registry.json uses this project's own lowercase schema.
struct RegistryEntry {
    std::string hive;
    std::string key_path;
    std::string value_name;
    std::string value_data;
    std::optional<Timestamp> last_write;

    bool operator==(const RegistryEntry&) const = default;
};

/// Everything parsed from one capture. Treated as immutable once built;
/// every analysis takes it by const reference.
struct Snapshot {
    std::string label;
    std::optional<Timestamp> captured_at;
    ProcessForest processes;
    std::vector<Connection> connections;
    std::vector<UserRecord> users;
    std::vector<ModuleRecord> modules;
    std::vector<RegistryEntry> registry;
};

enum class SourcePlugin { netstat, netscan };

// -- parsing ---------------------------------------------------------------
//
// All parsers throw spectre::Error with kind MalformedJson (text is not JSON)
// or SchemaError (the message starts with a JSON path such as
// "$[0].__children[2].PID"). Unknown keys are ignored.

ProcessForest parse_pstree(std::string_view json_text);
std::vector<Connection> parse_connections(std::string_view json_text, SourcePlugin source);
std::vector<UserRecord> parse_hashdump(std::string_view json_text);
std::vector<ModuleRecord> parse_ldrmodules(std::string_view json_text);
std::vector<RegistryEntry> parse_registry(std::string_view json_text);

// -- serialization (Volatility key names, sorted like Volatility prints them)

json to_volatility_json(const ProcessNode& node);
json to_volatility_json(const Connection& conn);
json to_volatility_json(const UserRecord& user);
json to_volatility_json(const ModuleRecord& module);
json to_volatility_json(const RegistryEntry& entry);

std::string serialize_pstree(const ProcessForest& forest);
/// Serializes rows regardless of provenance flags.
std::string serialize_connections(std::span<const Connection> rows);
std::string serialize_hashdump(std::span<const UserRecord> users);
std::string serialize_ldrmodules(std::span<const ModuleRecord> modules);
std::string serialize_registry(std::span<const RegistryEntry> entries);

// -- connections -----------------------------------------------------------

/// Keyed union of netstat and netscan rows. Rows seen by both carry both
/// flags; optional fields missing on the `netstat` side are filled from the
/// `netscan` side. Order: `netstat` rows first, then netscan-only rows.
std::vector<Connection> merge_connections(std::span<const Connection> netstat, std::span<const Connection> netscan);

// -- snapshot directories --------------------------------------------------

namespace snapshot_files {
inline constexpr const char* pstree = "pstree.json";
inline constexpr const char* netstat = "netstat.json";
inline constexpr const char* netscan = "netscan.json";
inline constexpr const char* hashdump = "hashdump.json";
inline constexpr const char* ldrmodules = "ldrmodules.json";
inline constexpr const char* registry = "registry.json";
}  // namespace snapshot_files

/// Loads whichever plugin files exist in `dir`. Parser errors are re-thrown
/// with the file name prepended; duplicate entity keys are SchemaErrors.
Snapshot load_snapshot(const std::filesystem::path& dir, const std::string& label);

/// Inverse of load_snapshot: netstat.json gets rows seen by netstat,
/// netscan.json rows seen by netscan. Files are written atomically.
void write_snapshot(const Snapshot& snapshot, const std::filesystem::path& dir);

// -- process forest helpers ------------------------------------------------

struct FlatProcess {
    const ProcessNode* node = nullptr;
    const ProcessNode* parent = nullptr;  // tree parent, null for roots
    int depth = 0;                        // roots are depth 0
};

/// Pre-order walk of the forest.
std::vector<FlatProcess> flatten(const ProcessForest& forest);
std::size_t count_processes(const ProcessForest& forest);

// -- entity identity -------------------------------------------------------

enum class EntityClass { processes, connections, users, modules, registry };
inline constexpr EntityClass kAllEntityClasses[] = {EntityClass::processes, EntityClass::connections,
                                                    EntityClass::users, EntityClass::modules,
                                                    EntityClass::registry};

std::string_view to_string(EntityClass cls) noexcept;
std::optional<EntityClass> parse_entity_class(std::string_view text) noexcept;

/// Identity of an entity within a snapshot. `key` is the compact JSON array
/// of the class's key tuple, e.g. `[14712,"2024-09-22T01:57:09+00:00","msys2-x86_64-2"]`.
struct EntityKey {
    EntityClass cls = EntityClass::processes;
    std::string key;

    auto operator<=>(const EntityKey&) const = default;
};

EntityKey process_key(const ProcessNode& node);
EntityKey connection_key(const Connection& conn);
EntityKey user_key(const UserRecord& user);
EntityKey module_key(const ModuleRecord& module);
EntityKey registry_key(const RegistryEntry& entry);

std::size_t entity_count(const Snapshot& snapshot, EntityClass cls);

}  // namespace spectre
