// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "spectre/cli.hpp"
#include "spectre/emulate.hpp"
#include "spectre/fsutil.hpp"
#include "spectre/report.hpp"

using namespace spectre;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "spectre");
    std::ostringstream out, err;
    int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

const std::string kStamp = "2024-10-21T00:00:00Z";

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("usage errors exit 64") {
        CHECK(run({}).code == exit_code::usage);
        CHECK(run({"analyze"}).code == exit_code::usage);
        CHECK(run({"frobnicate"}).code == exit_code::usage);
        CHECK(run({"emulate", "--out", "x", "--scenario", "nope"}).code == exit_code::usage);
        CHECK(run({"analyze", "--snapshot", ".", "--svg"}).code == exit_code::usage);
        CHECK(run({"bench", "--scales", "10,x"}).code == exit_code::usage);
        auto help = run({"--help"});
        CHECK(help.code == exit_code::ok);
        CHECK(help.out.find("analyze") != std::string::npos);
        CHECK(run({"--version"}).out == std::string(SPECTRE_VERSION) + "\n");
    }

    TEST_CASE("emulate writes seven files deterministically") {
        auto a = oracle::scratch_dir("cli-emu-a");
        auto b = oracle::scratch_dir("cli-emu-b");
        CHECK(run({"emulate", "--scenario", "baseline", "--seed", "1", "--n", "10", "--out", a.string()}).code == 0);
        CHECK(run({"emulate", "--scenario", "baseline", "--seed", "1", "--n", "10", "--out", b.string()}).code == 0);
        auto da = oracle::tree_digest(a);
        CHECK(da.size() == 7);
        CHECK(da == oracle::tree_digest(b));

        EmulationConfig cfg;
        cfg.seed = 1;
        cfg.out_dir = oracle::scratch_dir("cli-emu-lib");
        emulate_scenario(cfg);
        CHECK(oracle::tree_digest(cfg.out_dir) == da);
    }

    TEST_CASE("emulate benchmark corpus") {
        auto dir = oracle::scratch_dir("cli-bench500");
        auto r = run({"emulate", "--bench", "500", "--seed", "2", "--out", dir.string()});
        REQUIRE(r.code == 0);
        auto m = manifest_from_json(json::parse(r.out));
        CHECK(m.processes >= 500);
        CHECK(m.processes <= 750);
        CHECK(m.connections == 1000);
        CHECK(m.users == 500);
        CHECK(m.modules == 500);
        CHECK(m.registry == 500);
    }

    TEST_CASE("analyze exit codes and library equivalence") {
        auto clean = oracle::scratch_dir("cli-clean");
        auto dirty = oracle::scratch_dir("cli-dirty");
        REQUIRE(run({"emulate", "--seed", "3", "--out", clean.string()}).code == 0);
        REQUIRE(run({"emulate", "--scenario", "credential_dump", "--seed", "3", "--out", dirty.string()}).code == 0);

        auto r = run({"analyze", "--snapshot", clean.string(), "--timestamp", kStamp, "--fail-on-findings"});
        REQUIRE(r.code == 0);
        CHECK(json::parse(r.out)["findings"].empty());

        r = run({"analyze", "--snapshot", dirty.string(), "--timestamp", kStamp, "--fail-on-findings"});
        CHECK(r.code == exit_code::findings);
        CHECK(run({"analyze", "--snapshot", dirty.string(), "--timestamp", kStamp}).code == 0);

        auto s = load_snapshot(dirty, "cli-dirty");
        AnalysisReport report;
        report.generated_at = *parse_timestamp(kStamp);
        report.config = RuleConfig::defaults();
        report.snapshots = {summarize_snapshot(s)};
        report.findings = unenriched(run_all(s, report.config));
        CHECK(r.out == to_json(report).dump(2) + "\n");

        CHECK(run({"analyze", "--snapshot", "/nonexistent/dir"}).code == exit_code::error);
    }

    TEST_CASE("analyze writes report files") {
        auto corpus = oracle::scratch_dir("cli-corpus");
        auto out = oracle::scratch_dir("cli-out");
        REQUIRE(run({"emulate", "--scenario", "cmdline_ip", "--seed", "4", "--out", corpus.string()}).code == 0);
        auto ips = corpus / "bad.txt";
        std::string list;
        for (const auto& ip : default_malicious_ips()) list += ip + "\n";
        write_file_atomic(ips, list);
        auto r = run({"analyze", "--snapshot", corpus.string(), "--malicious-ips", ips.string(), "--out", out.string(),
                      "--svg", "--timestamp", kStamp});
        REQUIRE(r.code == 0);
        auto manifest = json::parse(r.out);
        CHECK(manifest["files"].size() == 4);
        auto report = json::parse(read_file(out / "report.json"));
        CHECK(report["finding_counts"]["CMDLINE_IP"].get<int>() > 0);
    }

    TEST_CASE("offline enrichment through analyze") {
        auto corpus = oracle::scratch_dir("cli-enrich");
        REQUIRE(run({"emulate", "--scenario", "credential_dump", "--seed", "5", "--out", corpus.string()}).code == 0);
        auto r = run({"analyze", "--snapshot", corpus.string(), "--enrich", "offline", "--fixtures",
                      (oracle::fixture_dir() / "intel").string(), "--timestamp", kStamp});
        REQUIRE(r.code == 0);
        CHECK(json::parse(r.out)["enrichment"] == "offline");
        CHECK(run({"analyze", "--snapshot", corpus.string(), "--enrich", "offline"}).code == exit_code::usage);
    }

    TEST_CASE("delta and timeline") {
        auto root = oracle::scratch_dir("cli-seq");
        REQUIRE(run({"emulate", "--seed", "6", "--sequence", "3", "--churn", "0.2", "--out", root.string()}).code == 0);
        auto a = (root / "snap-000").string(), b = (root / "snap-001").string(), c = (root / "snap-002").string();

        auto same = run({"delta", "--before", a, "--after", a, "--timestamp", kStamp});
        REQUIRE(same.code == 0);
        for (const auto& [_, counts] : json::parse(same.out)["deltas"][0]["summary"].items()) {
            CHECK(counts["added"] == 0);
            CHECK(counts["removed"] == 0);
            CHECK(counts["updated"] == 0);
        }

        auto d = run({"delta", "--before", a, "--after", b, "--timestamp", kStamp});
        REQUIRE(d.code == 0);
        auto before = load_snapshot(a, "before");
        auto after = load_snapshot(b, "after");
        CHECK(json::parse(d.out)["deltas"][0] == to_json(diff_snapshots(before, after)));

        auto t = run({"timeline", "--snapshots", a, b, c, "--timestamp", kStamp});
        REQUIRE(t.code == 0);
        std::vector<Snapshot> seq{load_snapshot(a, "snap-000"), load_snapshot(b, "snap-001"), load_snapshot(c, "snap-002")};
        CHECK(json::parse(t.out)["timeline"] == to_json(build_timeline(seq)));

        CHECK(run({"timeline", "--snapshots", a}).code == exit_code::error);
    }

    TEST_CASE("ip lookups") {
        auto r = run({"ip", "--addr", "127.0.0.1"});
        REQUIRE(r.code == 0);
        CHECK(json::parse(r.out)["routable"] == false);
        CHECK(run({"ip", "--addr", "bogus"}).code == exit_code::error);
        auto fixtures = (oracle::fixture_dir() / "intel").string();
        auto hit = run({"ip", "--addr", "185.220.101.1", "--offline", "--fixtures", fixtures});
        REQUIRE(hit.code == 0);
        CHECK(json::parse(hit.out)["blacklist"]["verdict"] == "malicious");
        CHECK(run({"ip", "--addr", "4.4.4.4", "--offline", "--fixtures", fixtures}).code == exit_code::fixture_missing);
        auto lenient = run({"ip", "--addr", "4.4.4.4", "--offline", "--lenient", "--fixtures", fixtures});
        CHECK(lenient.code == 0);
        CHECK(json::parse(lenient.out)["notes"].size() == 3);
    }

    TEST_CASE("bench output") {
        auto work = oracle::scratch_dir("cli-bench");
        auto r = run({"bench", "--scales", "10,20", "--repeat", "2", "--work-dir", work.string(), "--out", work.string()});
        REQUIRE(r.code == 0);
        auto csv = read_file(work / "bench.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 2 * 6);
        auto summary = json::parse(read_file(work / "scaling.json"));
        CHECK(summary.size() == 6);
        for (const auto& row : run_bench_scale(10, 0, 1, work.string())) {
            CHECK(row.wall_time > 0);
            CHECK(row.rows_processed > 0);
            CHECK(row.peak_memory > 0);
        }
    }
}
