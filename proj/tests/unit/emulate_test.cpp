// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "spectre/anomaly.hpp"
#include "spectre/delta.hpp"
#include "spectre/emulate.hpp"
#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"

using namespace spectre;
namespace fs = std::filesystem;

namespace {

RuleConfig rules_for(const EmulationConfig& cfg) {
    RuleConfig r = RuleConfig::defaults();
    r.malicious_ips = cfg.malicious_ips;
    r.rundll32_parent_allowlist = cfg.rundll32_parent_allowlist;
    return r;
}

bool is_superset(const std::vector<Finding>& found, const std::vector<PlantedFinding>& planted) {
    std::set<std::pair<RuleId, EntityKey>> got;
    for (const auto& f : found) got.insert({f.rule_id, f.subject});
    return std::all_of(planted.begin(), planted.end(),
                       [&](const PlantedFinding& p) { return got.contains({p.rule_id, p.subject}); });
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::IoError;
}

}  // namespace

TEST_SUITE("emulate") {
    TEST_CASE("same config writes identical files") {
        EmulationConfig cfg;
        cfg.seed = 42;
        cfg.scenario = Scenario::credential_dump;
        cfg.port_zero_rows = 2;
        auto a = oracle::scratch_dir("det-a");
        auto b = oracle::scratch_dir("det-b");
        cfg.out_dir = a;
        emulate_scenario(cfg);
        cfg.out_dir = b;
        emulate_scenario(cfg);
        auto da = oracle::tree_digest(a);
        CHECK(da.size() == 7);
        CHECK(da == oracle::tree_digest(b));
        cfg.seed = 43;
        auto c = oracle::scratch_dir("det-c");
        cfg.out_dir = c;
        emulate_scenario(cfg);
        CHECK(da != oracle::tree_digest(c));
    }

    TEST_CASE("written corpus loads back to the in-memory snapshot") {
        EmulationConfig cfg;
        cfg.seed = 9;
        cfg.scenario = Scenario::rundll32_process;
        cfg.port_zero_rows = 3;
        cfg.out_dir = oracle::scratch_dir("loadback");
        auto corpus = generate_corpus(cfg);
        auto manifest = emulate_scenario(cfg);
        CHECK(manifest == corpus.manifest);
        auto loaded = load_snapshot(cfg.out_dir, "emulated");
        CHECK(serialize_pstree(loaded.processes) == serialize_pstree(corpus.snapshot.processes));
        CHECK(loaded.connections == corpus.snapshot.connections);
        CHECK(loaded.users == corpus.snapshot.users);
        CHECK(loaded.modules == corpus.snapshot.modules);
        CHECK(loaded.registry == corpus.snapshot.registry);
        auto on_disk = manifest_from_json(json::parse(read_file(cfg.out_dir / "manifest.json")));
        CHECK(on_disk == manifest);
        CHECK(manifest.processes == count_processes(loaded.processes));
        CHECK(manifest.connections == loaded.connections.size());
        std::size_t netstat = 0, netscan = 0;
        for (const auto& c : loaded.connections) {
            netstat += c.seen_by_netstat;
            netscan += c.seen_by_netscan;
        }
        CHECK(manifest.netstat_rows == netstat);
        CHECK(manifest.netscan_rows == netscan);
    }

    TEST_CASE("emitted rows respect Volatility conventions") {
        EmulationConfig cfg;
        cfg.seed = 3;
        cfg.n_processes = 60;
        cfg.n_connections = 120;
        cfg.scenario = Scenario::cmdline_ip;
        cfg.port_zero_rows = 4;
        auto s = generate_corpus(cfg).snapshot;
        const auto& states = valid_connection_states();
        for (const auto& c : s.connections) {
            bool tcp = c.proto == Proto::TCPv4 || c.proto == Proto::TCPv6;
            if (tcp) {
                REQUIRE(c.state);
                CHECK(std::find(states.begin(), states.end(), *c.state) != states.end());
            } else {
                CHECK_FALSE(c.state);
            }
            CHECK((c.seen_by_netstat || c.seen_by_netscan));
            if (c.local_port == 0) CHECK_FALSE(c.seen_by_netstat);
        }
        std::set<std::int64_t> pids;
        for (const auto& fp : flatten(s.processes)) {
            CHECK(fp.node->image_file_name.size() <= 14);
            CHECK(pids.insert(fp.node->pid).second);
            if (fp.parent) CHECK(fp.node->ppid == fp.parent->pid);
            REQUIRE(fp.node->create_time);
            CHECK(*fp.node->create_time <= cfg.window_end);
            CHECK(*fp.node->create_time >= cfg.window_end - cfg.window);
        }
        for (const auto& u : s.users) {
            CHECK(u.lmhash.size() == 32);
            CHECK(u.nthash.size() == 32);
        }
    }

    TEST_CASE("baseline corpora are clean") {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            EmulationConfig cfg;
            cfg.seed = seed;
            cfg.port_zero_rows = 5;  // ignored for baseline
            auto corpus = generate_corpus(cfg);
            CHECK(corpus.manifest.planted_findings.empty());
            CHECK(run_all(corpus.snapshot, rules_for(cfg)).empty());
        }
    }

    TEST_CASE("planted findings are detected") {
        for (auto scenario : kAllScenarios) {
            if (scenario == Scenario::baseline) continue;
            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                EmulationConfig cfg;
                cfg.seed = seed;
                cfg.scenario = scenario;
                cfg.port_zero_rows = seed % 3;
                auto corpus = generate_corpus(cfg);
                CHECK_FALSE(corpus.manifest.planted_findings.empty());
                CHECK_MESSAGE(is_superset(run_all(corpus.snapshot, rules_for(cfg)), corpus.manifest.planted_findings),
                              to_string(scenario), " seed ", seed);
            }
        }
    }

    TEST_CASE("each scenario plants its own rule") {
        auto rules_of = [](Scenario sc) {
            EmulationConfig cfg;
            cfg.seed = 1;
            cfg.scenario = sc;
            cfg.malicious_ratio = 0;
            std::set<RuleId> out;
            for (const auto& p : generate_corpus(cfg).manifest.planted_findings) out.insert(p.rule_id);
            return out;
        };
        CHECK(rules_of(Scenario::credential_dump).contains(RuleId::cred_dump));
        CHECK(rules_of(Scenario::rundll32_process).contains(RuleId::rundll32_no_args));
        CHECK(rules_of(Scenario::rundll32_child).contains(RuleId::rundll32_bad_parent));
        CHECK(rules_of(Scenario::cmdline_ip).contains(RuleId::cmdline_ip));
    }

    TEST_CASE("malicious ratio drives malicious connections") {
        EmulationConfig cfg;
        cfg.seed = 11;
        cfg.scenario = Scenario::cmdline_ip;
        cfg.n_connections = 400;
        cfg.malicious_ratio = 0.25;
        auto s = generate_corpus(cfg).snapshot;
        std::set<std::string> bad(cfg.malicious_ips.begin(), cfg.malicious_ips.end());
        std::size_t n = 0;
        for (const auto& c : s.connections) n += bad.contains(c.foreign_addr);
        CHECK(n > 60);
        CHECK(n < 140);
    }

    TEST_CASE("invalid configurations") {
        EmulationConfig cfg;
        cfg.malicious_ips.push_back(cfg.benign_ips.front());
        CHECK(kind_of([&] { generate_corpus(cfg); }) == ErrorKind::InvalidConfig);
        EmulationConfig ratio;
        ratio.malicious_ratio = 1.5;
        CHECK(kind_of([&] { generate_corpus(ratio); }) == ErrorKind::InvalidConfig);
        EmulationConfig empty;
        empty.n_processes = 0;
        CHECK(kind_of([&] { generate_corpus(empty); }) == ErrorKind::InvalidConfig);
        EmulationConfig bad_ip;
        bad_ip.benign_ips = {"nope"};
        CHECK(kind_of([&] { generate_corpus(bad_ip); }) == ErrorKind::InvalidConfig);
    }

    TEST_CASE("benchmark corpus sizes") {
        for (std::size_t n : {10u, 100u, 500u}) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                auto corpus = generate_corpus(benchmark_config(n, seed));
                const auto& m = corpus.manifest;
                CHECK(m.processes >= n);
                CHECK(m.processes <= n + n / 2);
                CHECK(m.connections == 2 * n);
                CHECK(m.users == n);
                CHECK(m.modules == n);
                CHECK(m.registry == n);
            }
        }
    }

    TEST_CASE("sequence churn") {
        EmulationConfig cfg;
        cfg.seed = 8;
        cfg.n_processes = 80;
        cfg.n_connections = 160;
        cfg.n_users = 40;
        auto seq = generate_sequence(cfg, 4, 0.1);
        REQUIRE(seq.size() == 4);
        CHECK(seq[0].label == "snap-000");
        CHECK(seq[3].label == "snap-003");
        for (std::size_t i = 1; i < seq.size(); ++i) {
            auto summary = summarize_delta(diff_snapshots(seq[i - 1], seq[i]));
            for (auto cls : {EntityClass::processes, EntityClass::users, EntityClass::registry}) {
                auto m = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(entity_count(seq[i - 1], cls))));
                const auto& c = summary[static_cast<std::size_t>(cls)];
                CHECK_MESSAGE(c.added == m, to_string(cls));
                CHECK_MESSAGE(c.removed == m, to_string(cls));
                CHECK_MESSAGE(c.updated == m, to_string(cls));
            }
            for (auto cls : {EntityClass::connections, EntityClass::modules}) {
                const auto& c = summary[static_cast<std::size_t>(cls)];
                CHECK(c.added > 0);
                CHECK(c.removed > 0);
                CHECK(c.updated > 0);
            }
        }
        auto again = generate_sequence(cfg, 4, 0.1);
        for (std::size_t i = 0; i < 4; ++i) CHECK(serialize_pstree(again[i].processes) == serialize_pstree(seq[i].processes));

        auto root = oracle::scratch_dir("seq");
        auto labels = emulate_snapshot_sequence(cfg, 3, 0.1, root);
        CHECK(labels == std::vector<std::string>{"snap-000", "snap-001", "snap-002"});
        for (const auto& l : labels) CHECK(fs::exists(root / l / "pstree.json"));
        auto reloaded = load_snapshot(root / "snap-002", "snap-002");
        CHECK(reloaded.users == seq[2].users);
    }

    TEST_CASE("scenario names") {
        for (auto sc : kAllScenarios) CHECK(parse_scenario(to_string(sc)) == sc);
        CHECK_FALSE(parse_scenario("ransomware"));
    }
}
