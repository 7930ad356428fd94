// SPDX-License-Identifier: Apache-2.0
//
// Seeded generation of Volatility-compatible corpora. All randomness comes
// from one Rng per corpus, consumed in a fixed order: process forest,
// connections, netscan subset, users, modules, registry, scenario plants,
// port-0 rows. Identical configs therefore give byte-identical files.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spectre/anomaly.hpp"
#include "spectre/model.hpp"

namespace spectre {

enum class Scenario { baseline, credential_dump, rundll32_process, rundll32_child, cmdline_ip };

inline constexpr Scenario kAllScenarios[] = {Scenario::baseline, Scenario::credential_dump, Scenario::rundll32_process,
                                             Scenario::rundll32_child, Scenario::cmdline_ip};

std::string_view to_string(Scenario scenario) noexcept;
std::optional<Scenario> parse_scenario(std::string_view text) noexcept;

/// Fixed default end of the timestamp window, 2024-10-20T12:00:00Z.
Timestamp default_window_end();

/// Benign defaults are public DNS resolvers; malicious defaults are drawn
/// from the documentation ranges so no real host is ever labelled hostile.
std::vector<std::string> default_benign_ips();
std::vector<std::string> default_malicious_ips();

/// Connection states emitted for TCP rows. UDP rows carry no state.
const std::vector<std::string>& valid_connection_states();

struct EmulationConfig {
    std::uint64_t seed = 0;
    std::size_t n_processes = 10;
    std::size_t n_connections = 20;
    std::vector<std::string> benign_ips = default_benign_ips();
    std::vector<std::string> malicious_ips = default_malicious_ips();
    double malicious_ratio = 0.1;
    Scenario scenario = Scenario::baseline;
    std::filesystem::path out_dir;

    std::int64_t root_ppid = 0;
    Timestamp window_end = default_window_end();
    std::chrono::seconds window = std::chrono::hours(24);

    std::optional<std::size_t> n_users;     // default 6
    std::optional<std::size_t> n_modules;   // default n_processes
    std::optional<std::size_t> n_registry;  // default n_processes

    /// Share of netstat rows that netscan also reports.
    double netscan_coverage = 0.62;
    /// UDP rows on port 0 that only netscan sees; ignored for baseline.
    std::size_t port_zero_rows = 0;

    /// Parents a planted rundll32_child must avoid; keep in sync with the
    /// detector's RuleConfig.
    std::vector<std::string> rundll32_parent_allowlist = RuleConfig::defaults().rundll32_parent_allowlist;
};

struct PlantedFinding {
    RuleId rule_id = RuleId::rundll32_bad_parent;
    EntityKey subject;

    auto operator<=>(const PlantedFinding&) const = default;
};

struct ScenarioManifest {
    Scenario scenario = Scenario::baseline;
    std::uint64_t seed = 0;
    std::vector<PlantedFinding> planted_findings;  // sorted
    std::size_t processes = 0;
    std::size_t connections = 0;  // after merging netstat and netscan
    std::size_t netstat_rows = 0;
    std::size_t netscan_rows = 0;
    std::size_t users = 0;
    std::size_t modules = 0;
    std::size_t registry = 0;

    bool operator==(const ScenarioManifest&) const = default;
};

json to_json(const ScenarioManifest& manifest);
ScenarioManifest manifest_from_json(const json& j);

struct Corpus {
    Snapshot snapshot;  // equal to load_snapshot() of the written directory
    ScenarioManifest manifest;
};

/// Validates `cfg` (InvalidConfig) and builds the corpus in memory.
Corpus generate_corpus(const EmulationConfig& cfg, const std::string& label = "emulated");

/// Baseline forest only.
ProcessForest emulate_pstree(const EmulationConfig& cfg);

/// Connections owned by processes in `procs`, each seen by netstat.
std::vector<Connection> emulate_netstat(const EmulationConfig& cfg, const ProcessForest& procs);

/// Writes the six plugin files plus manifest.json to cfg.out_dir.
ScenarioManifest emulate_scenario(const EmulationConfig& cfg);

/// Baseline corpus with a process count uniform in [n, floor(1.5n)], 2n
/// connections and n users, modules and registry entries.
EmulationConfig benchmark_config(std::size_t n, std::uint64_t seed);
ScenarioManifest emulate_benchmark(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir);

/// k snapshots; each one removes, adds and mutates round(churn * |E|)
/// entities of every class relative to its predecessor. Labels are
/// "snap-000", "snap-001", ...
std::vector<Snapshot> generate_sequence(const EmulationConfig& cfg, std::size_t k, double churn);

/// Writes generate_sequence() under out_root/<label>/ and returns the labels.
std::vector<std::string> emulate_snapshot_sequence(const EmulationConfig& cfg, std::size_t k, double churn,
                                                   const std::filesystem::path& out_root);

}  // namespace spectre
