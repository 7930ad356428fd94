// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "../support/oracles.hpp"
#include "spectre/anomaly.hpp"
#include "spectre/cli.hpp"
#include "spectre/delta.hpp"
#include "spectre/emulate.hpp"
#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"
#include "spectre/netintel.hpp"
#include "spectre/report.hpp"
#include "spectre/timeline.hpp"

using namespace spectre;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (ok) return;
        pass = false;
        if (failures.size() < 5) failures.push_back(what);
    }
};

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

RuleConfig rules_for(const EmulationConfig& cfg) {
    RuleConfig r = RuleConfig::defaults();
    r.malicious_ips = cfg.malicious_ips;
    r.rundll32_parent_allowlist = cfg.rundll32_parent_allowlist;
    return r;
}

// -- 1 ---------------------------------------------------------------------

Outcome detection_accuracy() {
    Outcome o;
    auto root = oracle::scratch_dir("acc1");
    std::size_t scenario_runs = 0, supersets = 0, planted_total = 0;
    for (auto scenario : kAllScenarios) {
        if (scenario == Scenario::baseline) continue;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            EmulationConfig cfg;
            cfg.seed = seed;
            cfg.scenario = scenario;
            cfg.port_zero_rows = seed % 4;
            cfg.out_dir = root / "corpus";
            auto manifest = emulate_scenario(cfg);
            auto snapshot = load_snapshot(cfg.out_dir, "s");
            auto findings = run_all(snapshot, rules_for(cfg));
            std::set<std::pair<RuleId, EntityKey>> got;
            for (const auto& f : findings) got.insert({f.rule_id, f.subject});
            bool all = !manifest.planted_findings.empty();
            for (const auto& p : manifest.planted_findings) all = all && got.contains({p.rule_id, p.subject});
            planted_total += manifest.planted_findings.size();
            ++scenario_runs;
            supersets += all;
            o.expect(all, std::string(to_string(scenario)) + " seed " + std::to_string(seed) + " missed a planted finding");
        }
    }
    std::size_t baseline_runs = 0, clean = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        EmulationConfig cfg;
        cfg.seed = seed;
        cfg.out_dir = root / "baseline";
        auto manifest = emulate_scenario(cfg);
        auto findings = run_all(load_snapshot(cfg.out_dir, "b"), rules_for(cfg));
        ++baseline_runs;
        bool ok = findings.empty() && manifest.planted_findings.empty();
        clean += ok;
        o.expect(ok, "baseline seed " + std::to_string(seed) + " produced " + std::to_string(findings.size()) +
                         " findings");
    }
    o.detail = std::to_string(supersets) + "/" + std::to_string(scenario_runs) + " scenario corpora detected (" +
               std::to_string(planted_total) + " planted findings), " + std::to_string(clean) + "/" +
               std::to_string(baseline_runs) + " baseline corpora clean";
    return o;
}

// -- 2 ---------------------------------------------------------------------

std::set<std::string> keys_of(const json& obj) {
    std::set<std::string> out;
    for (const auto& [k, _] : obj.items()) out.insert(k);
    return out;
}

void pstree_keys(const json& nodes, std::set<std::set<std::string>>& seen) {
    for (const auto& n : nodes) {
        seen.insert(keys_of(n));
        pstree_keys(n["__children"], seen);
    }
}

Outcome schema_fidelity() {
    Outcome o;
    const std::set<std::string> pstree_set{"Audit",         "Cmd",       "CreateTime", "ExitTime", "Handles",
                                           "ImageFileName", "Offset(V)", "PID",        "PPID",     "Path",
                                           "SessionId",     "Threads",   "Wow64",      "__children"};
    const std::set<std::string> hashdump_set{"User", "__children", "lmhash", "nthash", "rid"};

    std::size_t corpora = 0;
    for (auto scenario : kAllScenarios) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            EmulationConfig cfg;
            cfg.seed = seed;
            cfg.scenario = scenario;
            cfg.out_dir = oracle::scratch_dir("acc2");
            emulate_scenario(cfg);
            std::set<std::set<std::string>> seen;
            pstree_keys(json::parse(read_file(cfg.out_dir / "pstree.json")), seen);
            o.expect(seen == std::set<std::set<std::string>>{pstree_set}, "pstree key set differs");
            std::set<std::set<std::string>> users;
            for (const auto& u : json::parse(read_file(cfg.out_dir / "hashdump.json"))) users.insert(keys_of(u));
            o.expect(users == std::set<std::set<std::string>>{hashdump_set}, "hashdump key set differs");
            ++corpora;
        }
    }

    auto golden = oracle::fixture_dir() / "golden";
    auto msys_text = read_file(golden / "pstree_msys2.json");
    auto msys = parse_pstree(msys_text);
    o.expect(msys.size() == 1 && msys[0].pid == 14712 && msys[0].ppid == 2612 && msys[0].threads == 7 &&
                 msys[0].image_file_name == "msys2-x86_64-2" && msys[0].create_time &&
                 format_timestamp(*msys[0].create_time) == "2024-09-22T01:57:09+00:00" && msys[0].audit_path &&
                 msys[0].audit_path->ends_with("msys2-x86_64-20240727.img"),
             "pstree golden values");
    o.expect(serialize_pstree(msys) == msys_text, "pstree golden not byte-exact on round trip");
    o.expect(keys_of(json::parse(msys_text)[0]) == pstree_set, "pstree golden key set");

    auto csrss_text = read_file(golden / "pstree_csrss.json");
    auto csrss = parse_pstree(csrss_text);
    o.expect(csrss.size() == 1 && csrss[0].cmd && csrss[0].cmd->find("MaxRequestThreads=16") != std::string::npos,
             "command-line golden");
    o.expect(serialize_pstree(csrss) == csrss_text, "command-line golden not byte-exact on round trip");

    auto hd_text = read_file(golden / "hashdump.json");
    auto users = parse_hashdump(hd_text);
    o.expect(users.size() == 2 && users[0].rid == 500 && users[0].user == "Administrator" &&
                 users[0].nthash == "31d6cfe0d16ae931b73c59d7e0c089c0" && users[1].rid == 501 &&
                 users[1].user == "Guest" && users[1].lmhash == "aad3b435b51404eeaad3b435b51404ee",
             "hashdump golden values");
    o.expect(serialize_hashdump(users) == hd_text, "hashdump golden not byte-exact on round trip");

    o.detail = std::to_string(corpora) + " emulated corpora match both key sets; 3 goldens round-trip byte-exact";
    return o;
}

// -- 3 ---------------------------------------------------------------------

Outcome delta_equivalence() {
    Outcome o;
    std::mt19937_64 rng(0x5eed);
    std::size_t trials = 0, equal = 0, conserved = 0, max_entities = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto before = oracle::random_snapshot(rng, 200, "before");
        auto after = trial % 4 == 0 ? oracle::random_snapshot(rng, 200, "after") : oracle::perturb(rng, before, "after");
        auto report = diff_snapshots(before, after);
        auto summary = summarize_delta(report);
        bool same = true, identity = true;
        for (auto cls : kAllEntityClasses) {
            max_entities = std::max({max_entities, entity_count(before, cls), entity_count(after, cls)});
            same = same && report[cls] == oracle::brute_force_delta(before, after, cls);
            const auto& c = summary[static_cast<std::size_t>(cls)];
            identity = identity && c.added + c.removed + c.updated + c.consistent ==
                                       oracle::key_union_size(before, after, cls);
        }
        ++trials;
        equal += same;
        conserved += identity;
        o.expect(same, "trial " + std::to_string(trial) + " differs from the oracle");
        o.expect(identity, "trial " + std::to_string(trial) + " breaks conservation");
    }
    o.detail = std::to_string(equal) + "/" + std::to_string(trials) + " pairs equal the oracle, " +
               std::to_string(conserved) + "/" + std::to_string(trials) + " conserve the key union (max " +
               std::to_string(max_entities) + " entities/class)";
    return o;
}

// -- 4 ---------------------------------------------------------------------

double stage_time(const std::vector<BenchResult>& rows, BenchStage stage) {
    for (const auto& r : rows)
        if (r.stage == stage) return r.wall_time;
    return 0;
}

double total_time(const std::vector<BenchResult>& rows) {
    double t = 0;
    for (const auto& r : rows) t += r.wall_time;
    return t;
}

Outcome benchmark_contract() {
    Outcome o;
    auto root = oracle::scratch_dir("acc4");
    for (std::size_t n : {10u, 100u, 500u, 5000u, 10000u}) {
        auto m = emulate_benchmark(n, 7, root / ("n" + std::to_string(n)));
        bool ok = m.processes >= n && m.processes <= n + n / 2 && m.connections == 2 * n && m.users == n &&
                  m.modules == n && m.registry == n;
        o.expect(ok, "counts off at n=" + std::to_string(n));
        fs::remove_all(root / ("n" + std::to_string(n)));
    }

    auto full = run_bench_scale(10000, 0, 1, (root / "pipeline").string());
    double full_s = total_time(full);
    o.expect(full_s < 60.0, "n=10000 pipeline took " + fmt(full_s) + " s");

    std::vector<double> small, large;
    for (std::size_t r = 0; r < 3; ++r) {
        small.push_back(stage_time(run_bench_scale(1000, r, 100 + r, (root / "ratio").string()), BenchStage::analyze));
        large.push_back(stage_time(run_bench_scale(10000, r, 100 + r, (root / "ratio").string()), BenchStage::analyze));
    }
    std::sort(small.begin(), small.end());
    std::sort(large.begin(), large.end());
    double ratio = large[1] / small[1];
    o.expect(ratio <= 25.0, "analyze ratio " + fmt(ratio));
    fs::remove_all(root);
    o.detail = "counts hold for n in {10,100,500,5000,10000}; n=10000 pipeline " + fmt(full_s) +
               " s; analyze t(10000)/t(1000) = " + fmt(ratio) + " (median of 3)";
    return o;
}

// -- 5 ---------------------------------------------------------------------

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "spectre");
    std::ostringstream out, err;
    return run_cli(args, out, err);
}

std::map<std::string, std::string> pipeline_run(const fs::path& root) {
    const std::string stamp = "2024-10-21T00:00:00Z";
    auto s = [&](const char* p) { return (root / p).string(); };
    cli({"emulate", "--scenario", "rundll32_child", "--seed", "99", "--n", "40", "--port-zero", "2", "--out", s("corpus")});
    cli({"emulate", "--seed", "99", "--n", "40", "--sequence", "4", "--churn", "0.2", "--out", s("seq")});
    cli({"analyze", "--snapshot", s("corpus"), "--out", s("analyze"), "--svg", "--timestamp", stamp});
    cli({"delta", "--before", s("seq/snap-000"), "--after", s("seq/snap-001"), "--out", s("delta"), "--svg",
         "--timestamp", stamp});
    cli({"timeline", "--snapshots", s("seq/snap-000"), s("seq/snap-001"), s("seq/snap-002"), s("seq/snap-003"),
         "--out", s("timeline"), "--svg", "--timestamp", stamp});
    return oracle::tree_digest(root);
}

Outcome determinism() {
    Outcome o;
    auto a = pipeline_run(oracle::scratch_dir("acc5a"));
    auto b = pipeline_run(oracle::scratch_dir("acc5b"));
    std::size_t svgs = 0, reports = 0, corpus_files = 0;
    for (const auto& [name, _] : a) {
        if (name.ends_with(".svg"))
            ++svgs;
        else if (name.ends_with("report.json"))
            ++reports;
        else
            ++corpus_files;
    }
    o.expect(svgs == 5 + 5 + 5 - 2 - 2 && reports == 3, "pipeline produced an unexpected file set");
    o.expect(a == b, "outputs differ between runs");
    for (const auto& [name, digest] : a)
        if (!b.contains(name) || b.at(name) != digest) o.expect(false, name + " differs");
    o.detail = std::to_string(a.size()) + " files byte-identical across two runs (" + std::to_string(corpus_files) +
               " corpus, " + std::to_string(reports) + " reports, " + std::to_string(svgs) + " SVGs)";
    return o;
}

// -- 6 ---------------------------------------------------------------------

Outcome merge_property() {
    Outcome o;
    std::size_t sets = 0, zero_rows = 0;
    auto check = [&](const std::vector<Connection>& netstat, const std::vector<Connection>& netscan,
                     const std::string& name) {
        auto merged = merge_connections(netstat, netscan);
        o.expect(merged.size() >= std::max(netstat.size(), netscan.size()), name + ": merged smaller than an input");
        std::set<std::string> merged_keys;
        for (const auto& c : merged) merged_keys.insert(connection_key(c).key);
        Snapshot s;
        s.label = name;
        s.connections = merged;
        std::set<std::string> flagged;
        for (const auto& f : detect_port_zero(s, RuleConfig::defaults())) flagged.insert(f.subject.key);
        for (const auto& c : netscan) {
            if (c.local_port != 0 && c.foreign_port != 0) continue;
            ++zero_rows;
            auto key = connection_key(c).key;
            o.expect(merged_keys.contains(key), name + ": port-0 row lost in merge");
            o.expect(flagged.contains(key), name + ": port-0 row not flagged");
        }
        ++sets;
    };
    for (const char* name : {"merge_small", "merge_mixed", "merge_zero_only"}) {
        auto dir = oracle::fixture_dir() / name;
        check(parse_connections(read_file(dir / "netstat.json"), SourcePlugin::netstat),
              parse_connections(read_file(dir / "netscan.json"), SourcePlugin::netscan), name);
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        EmulationConfig cfg;
        cfg.seed = seed;
        cfg.scenario = Scenario::credential_dump;
        cfg.port_zero_rows = 1 + seed % 5;
        cfg.out_dir = oracle::scratch_dir("acc6");
        emulate_scenario(cfg);
        check(parse_connections(read_file(cfg.out_dir / "netstat.json"), SourcePlugin::netstat),
              parse_connections(read_file(cfg.out_dir / "netscan.json"), SourcePlugin::netscan),
              "emulated seed " + std::to_string(seed));
    }
    o.detail = std::to_string(sets) + " netstat/netscan pairs, " + std::to_string(zero_rows) +
               " port-0 rows preserved and flagged";
    return o;
}

// -- 7 ---------------------------------------------------------------------

std::string expected_verdict(const json& bl) {
    if (bl.contains("verdict")) return bl["verdict"];
    int pos = bl["positive_engine_count"], total = bl["total_engine_count"];
    if (pos >= 3) return "malicious";
    if (pos >= 1) return "suspicious";
    return total > 0 ? "clean" : "unknown";
}

Outcome offline_hermeticity() {
    Outcome o;
    ProviderConfig cfg;
    cfg.mode = SourceMode::offline;
    cfg.fixture_dir = oracle::fixture_dir() / "intel";
    cfg.strict = true;
    IntelClient client(cfg);
    std::size_t fixtures = 0, matched = 0;
    std::map<std::string, int> verdicts;
    for (const auto& entry : fs::directory_iterator(cfg.fixture_dir)) {
        auto fixture = json::parse(read_file(entry.path()));
        std::string ip = entry.path().stem().string();
        std::replace(ip.begin(), ip.end(), '_', ':');
        auto intel = client.lookup(ip);
        bool ok = intel.blacklist && std::string(to_string(intel.blacklist->verdict)) == expected_verdict(fixture["blacklist"]) &&
                  intel.blacklist->positive_engine_count == fixture["blacklist"]["positive_engine_count"] &&
                  intel.geo && intel.geo->country == fixture["geo"]["country"].get<std::string>() && intel.whois &&
                  intel.whois->netname == fixture["whois"]["netname"].get<std::string>() && intel.notes.empty();
        ++fixtures;
        matched += ok;
        if (intel.blacklist) ++verdicts[std::string(to_string(intel.blacklist->verdict))];
        o.expect(ok, ip + " does not match its fixture");
    }
    o.expect(fixtures == 20, "expected 20 fixtures, found " + std::to_string(fixtures));
    o.expect(live_network_operations() == 0, "live network operations were issued");
    std::string mix;
    for (const auto& [v, n] : verdicts) mix += (mix.empty() ? "" : ", ") + std::to_string(n) + " " + v;
    o.detail = std::to_string(matched) + "/" + std::to_string(fixtures) + " fixtures round-trip (" + mix + "); " +
               std::to_string(live_network_operations()) + " live network operations in this process";
    return o;
}

// -- 8 ---------------------------------------------------------------------

std::size_t attr_size(const oracle::SvgElement& el, const char* name) {
    return static_cast<std::size_t>(std::stoull(el.attrs.at(name)));
}

Outcome svg_validity() {
    Outcome o;
    std::mt19937_64 rng(808);
    std::size_t documents = 0;
    auto parse = [&](const std::string& svg, const std::string& plot) {
        auto els = oracle::parse_svg(svg);
        ++documents;
        o.expect(!els.empty() && els[0].tag == "svg" && els[0].attrs.at("data-plot") == plot, plot + ": bad root");
        o.expect(oracle::self_contained(els), plot + ": external reference");
        return els;
    };
    for (int trial = 0; trial < 50; ++trial) {
        try {
            EmulationConfig cfg;
            cfg.seed = rng();
            cfg.scenario = kAllScenarios[rng() % std::size(kAllScenarios)];
            cfg.n_processes = 1 + rng() % 60;
            cfg.n_connections = rng() % 120;
            cfg.port_zero_rows = rng() % 4;
            cfg.malicious_ratio = static_cast<double>(rng() % 50) / 100.0;
            auto seq = generate_sequence(cfg, 2 + rng() % 4, static_cast<double>(rng() % 40) / 100.0);
            const auto& last = seq.back();
            auto rules = rules_for(cfg);
            auto findings = run_all(last, rules);

            std::vector<SnapshotSummary> sums;
            for (const auto& s : seq) sums.push_back(summarize_snapshot(s));
            auto mem = parse(render_memory_plot(sums), "memory");
            auto bars = oracle::with_class(mem, "bar");
            bool mem_ok = bars.size() == 5 * sums.size();
            for (std::size_t i = 0; mem_ok && i < bars.size(); ++i)
                mem_ok = attr_size(bars[i], "data-value") == sums[i % sums.size()].counts[i / sums.size()];
            o.expect(mem_ok, "memory bars differ from summaries");

            auto anomaly = parse(render_anomaly_plot(findings), "anomaly");
            std::size_t seg_sum = 0;
            for (const auto& s : oracle::with_class(anomaly, "segment")) seg_sum += attr_size(s, "data-count");
            std::set<RuleId> rules_fired;
            for (const auto& f : findings) rules_fired.insert(f.rule_id);
            o.expect(seg_sum == findings.size() && oracle::with_class(anomaly, "bar").size() == rules_fired.size(),
                     "anomaly bars differ from findings");

            std::size_t timestamped = 0;
            for (const auto& fp : flatten(last.processes)) timestamped += fp.node->create_time.has_value();
            auto scatter = parse(render_process_scatter(last, findings), "scatter");
            auto flagged = flagged_pids(last, findings);
            std::size_t flagged_points = 0;
            for (const auto& p : oracle::with_class(scatter, "point"))
                flagged_points += p.attrs.at("data-flagged") == "true";
            std::size_t flagged_expected = 0;
            for (const auto& fp : flatten(last.processes))
                flagged_expected += fp.node->create_time &&
                                    std::binary_search(flagged.begin(), flagged.end(), fp.node->pid);
            o.expect(oracle::with_class(scatter, "point").size() == timestamped && flagged_points == flagged_expected,
                     "scatter points differ from processes");

            auto report = diff_snapshots(seq[seq.size() - 2], last);
            auto summary = summarize_delta(report);
            auto delta = parse(render_delta_plot(report), "delta");
            auto dbars = oracle::with_class(delta, "bar");
            bool delta_ok = dbars.size() == 20;
            for (std::size_t i = 0; delta_ok && i < 20; ++i) {
                const auto& c = summary[i / 4];
                std::size_t want[] = {c.added, c.removed, c.updated, c.consistent};
                delta_ok = attr_size(dbars[i], "data-value") == want[i % 4];
            }
            o.expect(delta_ok, "delta bars differ from summary");

            TimelineOptions topt;
            topt.malicious_ips = cfg.malicious_ips;
            auto series = build_timeline(seq, topt);
            PlotOptions po;
            po.top_n = 1 + rng() % 12;
            auto tl = parse(render_timeline_plot(series, po), "timeline");
            std::size_t markers = 0;
            for (const auto& p : series.processes) markers += p.malicious_indices.size();
            o.expect(oracle::with_class(tl, "class-line").size() == 5 &&
                         oracle::with_class(tl, "process-line").size() == std::min(po.top_n, series.processes.size()) &&
                         oracle::with_class(tl, "malicious-marker").size() == markers &&
                         oracle::with_class(tl, "flag-marker").size() == series.flagged_points.size(),
                     "timeline elements differ from series");
        } catch (const std::exception& e) {
            o.expect(false, "trial " + std::to_string(trial) + ": " + e.what());
        }
    }
    o.detail = std::to_string(documents) + " documents from 50 randomized inputs parse as XML with counts matching";
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {1, "detection accuracy", detection_accuracy}, {2, "schema fidelity", schema_fidelity},
        {3, "delta oracle equivalence", delta_equivalence}, {4, "benchmark contract", benchmark_contract},
        {5, "determinism", determinism},               {6, "merge property", merge_property},
        {7, "offline hermeticity", offline_hermeticity}, {8, "SVG validity", svg_validity},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        auto t0 = clock_type::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
                  << " [" << fmt(seconds_since(t0), 1) << " s]\n";
        for (const auto& f : o.failures) std::cout << "      " << f << "\n";
        std::cout.flush();
        failed += !o.pass;
    }
    std::error_code ec;
    fs::remove_all(oracle::scratch_dir("").parent_path(), ec);
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all 8 criteria passed")) << "\n";
    return failed ? 1 : 0;
}
