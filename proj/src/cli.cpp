// SPDX-License-Identifier: Apache-2.0
#include "spectre/cli.hpp"

#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "spectre/anomaly.hpp"
#include "spectre/delta.hpp"
#include "spectre/emulate.hpp"
#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"
#include "spectre/model.hpp"
#include "spectre/netintel.hpp"
#include "spectre/report.hpp"
#include "spectre/timeline.hpp"

namespace spectre {

namespace fs = std::filesystem;

std::string_view to_string(BenchStage stage) noexcept {
    switch (stage) {
        case BenchStage::emulate: return "emulate";
        case BenchStage::analyze: return "analyze";
        case BenchStage::anomaly: return "anomaly";
        case BenchStage::delta: return "delta";
        case BenchStage::timeline: return "timeline";
        case BenchStage::render: return "render";
    }
    return "analyze";
}

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Timestamp report_time(const std::string& flag) {
    if (!flag.empty()) {
        if (auto ts = parse_timestamp(flag)) return *ts;
        throw UsageError("--timestamp: not an ISO-8601 date-time: " + flag);
    }
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
        try {
            return timestamp_from_unix(std::stoll(epoch));
        } catch (const std::exception&) {
            throw UsageError(std::string("SOURCE_DATE_EPOCH is not an integer: ") + epoch);
        }
    }
    return std::chrono::floor<std::chrono::seconds>(SystemClock().now());
}

struct RuleFlags {
    std::string config;
    std::vector<std::string> malicious_files;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", config, "Rule configuration (JSON)")->check(CLI::ExistingFile);
        cmd->add_option("--malicious-ips", malicious_files, "Extra newline-delimited malicious address list")
            ->check(CLI::ExistingFile);
    }

    RuleConfig load() const {
        RuleConfig cfg = config.empty() ? RuleConfig::defaults() : load_rule_config(config);
        for (const auto& f : malicious_files)
            for (auto& ip : load_ip_list(f)) cfg.malicious_ips.push_back(std::move(ip));
        return cfg;
    }
};

struct OutputFlags {
    std::string out;
    bool svg = false;
    std::string timestamp;
    bool fail_on_findings = false;

    void add(CLI::App* cmd) {
        cmd->add_option("--out", out, "Directory for report.json and plots (default: report to stdout)");
        cmd->add_flag("--svg", svg, "Also write SVG plots (needs --out)");
        cmd->add_option("--timestamp", timestamp, "generated_at value (default: SOURCE_DATE_EPOCH or now)");
        cmd->add_flag("--fail-on-findings", fail_on_findings, "Exit 1 when any finding is reported");
    }

    int emit(const AnalysisReport& report, const ReportRequest& request, std::ostream& out_stream) const {
        if (svg && out.empty()) throw UsageError("--svg requires --out");
        if (out.empty()) {
            out_stream << to_json(report).dump(2) << "\n";
        } else {
            out_stream << to_json(write_report(report, out, request)).dump(2) << "\n";
        }
        return fail_on_findings && !report.findings.empty() ? exit_code::findings : exit_code::ok;
    }
};

std::string dir_label(const std::string& dir) {
    fs::path p = fs::path(dir).lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    std::string name = p.filename().string();
    return name.empty() ? dir : name;
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::uint64_t peak_rss_bytes() {
    rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    return static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;  // Linux reports KiB
}

}  // namespace

// -- bench -----------------------------------------------------------------

std::vector<BenchResult> run_bench_scale(std::size_t n, std::size_t repeat, std::uint64_t seed,
                                         const std::string& work_dir) {
    using clock = std::chrono::steady_clock;
    std::vector<BenchResult> rows;
    auto record = [&](BenchStage stage, clock::time_point start, std::size_t processed) {
        double secs = std::chrono::duration<double>(clock::now() - start).count();
        rows.push_back({n, repeat, stage, std::max(secs, 1e-9), peak_rss_bytes(), processed});
    };
    auto entities = [](const Snapshot& s) {
        std::size_t total = 0;
        for (auto cls : kAllEntityClasses) total += entity_count(s, cls);
        return total;
    };
    const fs::path root = fs::path(work_dir) / ("n" + std::to_string(n) + "-r" + std::to_string(repeat));

    auto t0 = clock::now();
    EmulationConfig cfg = benchmark_config(n, seed);
    auto pair = generate_sequence(cfg, 2, 0.1);
    write_snapshot(pair[0], root / pair[0].label);
    write_snapshot(pair[1], root / pair[1].label);
    record(BenchStage::emulate, t0, entities(pair[0]) + entities(pair[1]));

    t0 = clock::now();
    Snapshot a = load_snapshot(root / pair[0].label, pair[0].label);
    SnapshotSummary summary = summarize_snapshot(a);
    record(BenchStage::analyze, t0, entities(a));

    RuleConfig rules = RuleConfig::defaults();
    rules.malicious_ips = cfg.malicious_ips;
    t0 = clock::now();
    auto findings = run_all(a, rules);
    record(BenchStage::anomaly, t0, entities(a));

    Snapshot b = load_snapshot(root / pair[1].label, pair[1].label);
    t0 = clock::now();
    auto delta = diff_snapshots(a, b);
    record(BenchStage::delta, t0, entities(a) + entities(b));

    std::vector<Snapshot> seq{a, b};
    t0 = clock::now();
    TimelineOptions topt;
    topt.malicious_ips = rules.malicious_ips;
    auto series = build_timeline(seq, topt);
    record(BenchStage::timeline, t0, entities(a) + entities(b));

    t0 = clock::now();
    AnalysisReport report;
    report.config = rules;
    report.snapshots = {summary, summarize_snapshot(b)};
    report.findings = unenriched(findings);
    report.deltas = {delta};
    report.timeline = series;
    ReportRequest req;
    req.svg = true;
    req.scatter_snapshot = &a;
    write_report(report, root / "report", req);
    record(BenchStage::render, t0, entities(a) + entities(b));
    return rows;
}

std::string bench_csv(const std::vector<BenchResult>& rows) {
    std::ostringstream out;
    out << "n,repeat,stage,wall_time_s,peak_memory_bytes,rows_processed\n";
    out.precision(6);
    for (const auto& r : rows)
        out << r.n << ',' << r.repeat << ',' << to_string(r.stage) << ',' << std::fixed << r.wall_time
            << std::defaultfloat << ',' << r.peak_memory << ',' << r.rows_processed << '\n';
    return out.str();
}

namespace {

json scaling_summary(const std::vector<BenchResult>& rows) {
    std::map<std::string, std::map<std::size_t, std::vector<double>>> times;
    for (const auto& r : rows) times[std::string(to_string(r.stage))][r.n].push_back(r.wall_time);
    json out = json::object();
    for (auto& [stage, by_n] : times) {
        json points = json::array();
        std::vector<std::pair<double, double>> logs;
        for (auto& [n, ts] : by_n) {
            std::sort(ts.begin(), ts.end());
            double med = ts.size() % 2 ? ts[ts.size() / 2] : (ts[ts.size() / 2 - 1] + ts[ts.size() / 2]) / 2;
            points.push_back({{"n", n}, {"median_wall_time_s", med}});
            logs.push_back({std::log(static_cast<double>(n)), std::log(med)});
        }
        json entry = {{"points", points}, {"loglog_slope", nullptr}};
        if (logs.size() >= 2) {
            double mx = 0, my = 0;
            for (auto [x, y] : logs) mx += x, my += y;
            mx /= static_cast<double>(logs.size());
            my /= static_cast<double>(logs.size());
            double sxy = 0, sxx = 0;
            for (auto [x, y] : logs) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
            if (sxx > 0) entry["loglog_slope"] = sxy / sxx;
        }
        out[stage] = std::move(entry);
    }
    return out;
}

// -- subcommands -----------------------------------------------------------

struct AnalyzeArgs {
    std::string snapshot, label, enrich, fixtures;
    RuleFlags rules;
    OutputFlags output;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
    if (!a.enrich.empty() && a.enrich != "live" && a.enrich != "offline")
        throw UsageError("--enrich must be live or offline");
    if (a.enrich == "offline" && a.fixtures.empty()) throw UsageError("--enrich offline requires --fixtures");
    RuleConfig cfg = a.rules.load();
    Timestamp generated = report_time(a.output.timestamp);
    Snapshot s = load_snapshot(a.snapshot, a.label.empty() ? dir_label(a.snapshot) : a.label);

    AnalysisReport report;
    report.generated_at = generated;
    report.config = cfg;
    report.snapshots = {summarize_snapshot(s)};
    auto findings = run_all(s, cfg);
    if (a.enrich.empty()) {
        report.findings = unenriched(findings);
    } else {
        ProviderConfig pc;
        pc.mode = a.enrich == "live" ? SourceMode::live : SourceMode::offline;
        pc.fixture_dir = a.fixtures;
        pc.clock = std::make_shared<ManualClock>(generated);
        if (pc.mode == SourceMode::live) pc.clock.reset();
        report.findings = enrich_findings(findings, pc);
        report.enrichment = pc.mode;
    }
    ReportRequest req;
    req.svg = a.output.svg;
    req.scatter_snapshot = &s;
    return a.output.emit(report, req, out);
}

struct DeltaArgs {
    std::string before, after, before_label = "before", after_label = "after";
    RuleFlags rules;
    OutputFlags output;
};

int cmd_delta(const DeltaArgs& a, std::ostream& out) {
    RuleConfig cfg = a.rules.load();
    Timestamp generated = report_time(a.output.timestamp);
    Snapshot before = load_snapshot(a.before, a.before_label);
    Snapshot after = load_snapshot(a.after, a.after_label);
    DeltaReport delta = diff_snapshots(before, after);

    AnalysisReport report;
    report.generated_at = generated;
    report.config = cfg;
    report.snapshots = {summarize_snapshot(before), summarize_snapshot(after)};
    report.findings = unenriched(delta_findings(delta, after, cfg));
    report.deltas = {std::move(delta)};
    ReportRequest req;
    req.svg = a.output.svg;
    req.scatter_snapshot = &after;
    return a.output.emit(report, req, out);
}

struct TimelineArgs {
    std::vector<std::string> snapshots;
    bool sort = false;
    double factor = 3.0;
    std::size_t top_n = 10;
    RuleFlags rules;
    OutputFlags output;
};

int cmd_timeline(const TimelineArgs& a, std::ostream& out) {
    RuleConfig cfg = a.rules.load();
    Timestamp generated = report_time(a.output.timestamp);
    std::vector<Snapshot> seq;
    for (const auto& dir : a.snapshots) seq.push_back(load_snapshot(dir, dir_label(dir)));
    if (a.sort) order_snapshots(seq);
    TimelineOptions topt;
    topt.deviation_factor = a.factor;
    topt.malicious_ips = cfg.malicious_ips;
    TimelineSeries series = build_timeline(seq, topt);

    AnalysisReport report;
    report.generated_at = generated;
    report.config = cfg;
    for (const auto& s : seq) report.snapshots.push_back(summarize_snapshot(s));
    report.findings = unenriched(run_all(seq.back(), cfg));
    report.timeline = std::move(series);
    ReportRequest req;
    req.svg = a.output.svg;
    req.scatter_snapshot = &seq.back();
    req.plot.top_n = a.top_n;
    return a.output.emit(report, req, out);
}

struct EmulateArgs {
    std::string scenario = "baseline", out, malicious_file, benign_file, window_end;
    std::uint64_t seed = 0;
    std::size_t n = 10;
    std::optional<std::size_t> connections, users, modules, registry;
    double ratio = 0.1;
    std::size_t port_zero = 0;
    std::size_t sequence = 0;
    double churn = 0.1;
    std::size_t bench = 0;
};

int cmd_emulate(const EmulateArgs& a, std::ostream& out) {
    if (a.bench > 0) {
        out << to_json(emulate_benchmark(a.bench, a.seed, a.out)).dump(2) << "\n";
        return exit_code::ok;
    }
    auto scenario = parse_scenario(a.scenario);
    if (!scenario) throw UsageError("unknown scenario: " + a.scenario);
    EmulationConfig cfg;
    cfg.seed = a.seed;
    cfg.scenario = *scenario;
    cfg.n_processes = a.n;
    cfg.n_connections = a.connections.value_or(2 * a.n);
    cfg.malicious_ratio = a.ratio;
    cfg.out_dir = a.out;
    cfg.port_zero_rows = a.port_zero;
    cfg.n_users = a.users;
    cfg.n_modules = a.modules;
    cfg.n_registry = a.registry;
    if (!a.malicious_file.empty()) cfg.malicious_ips = load_ip_list(a.malicious_file);
    if (!a.benign_file.empty()) cfg.benign_ips = load_ip_list(a.benign_file);
    if (a.window_end == "now") {
        cfg.window_end = std::chrono::floor<std::chrono::seconds>(SystemClock().now());
    } else if (!a.window_end.empty()) {
        auto ts = parse_timestamp(a.window_end);
        if (!ts) throw UsageError("--window-end: not an ISO-8601 date-time: " + a.window_end);
        cfg.window_end = *ts;
    }
    if (a.sequence > 0) {
        out << json(emulate_snapshot_sequence(cfg, a.sequence, a.churn, a.out)).dump(2) << "\n";
        return exit_code::ok;
    }
    out << to_json(emulate_scenario(cfg)).dump(2) << "\n";
    return exit_code::ok;
}

struct IpArgs {
    std::string addr, fixtures;
    bool offline = false;
    bool lenient = false;
};

int cmd_ip(const IpArgs& a, std::ostream& out) {
    if (a.offline && a.fixtures.empty()) throw UsageError("--offline requires --fixtures");
    ProviderConfig pc;
    pc.mode = a.offline ? SourceMode::offline : SourceMode::live;
    pc.fixture_dir = a.fixtures;
    pc.strict = a.offline && !a.lenient;
    out << to_json(lookup_ip(a.addr, pc)).dump(2) << "\n";
    return exit_code::ok;
}

struct BenchArgs {
    std::string scales = "10,100,500,5000,10000";
    std::size_t repeat = 1;
    std::uint64_t seed = 1;
    std::string out, work_dir;
    bool keep = false;
};

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
    std::vector<std::size_t> scales;
    for (const auto& s : split_csv(a.scales)) {
        try {
            std::size_t pos = 0;
            auto v = std::stoull(s, &pos);
            if (pos != s.size() || v == 0) throw std::invalid_argument(s);
            scales.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw UsageError("--scales: not a positive integer: " + s);
        }
    }
    if (scales.empty()) throw UsageError("--scales is empty");
    if (a.repeat == 0) throw UsageError("--repeat must be at least 1");

    fs::path work = a.work_dir.empty()
                        ? fs::temp_directory_path() / ("spectre-bench-" + std::to_string(::getpid()))
                        : fs::path(a.work_dir);
    std::vector<BenchResult> rows;
    for (auto n : scales) {
        for (std::size_t r = 0; r < a.repeat; ++r) {
            auto part = run_bench_scale(n, r, a.seed + r, work.string());
            rows.insert(rows.end(), part.begin(), part.end());
            err << "bench: n=" << n << " repeat=" << r << " done\n";
        }
    }
    if (!a.keep) {
        std::error_code ec;
        fs::remove_all(work, ec);
    }
    std::string csv = bench_csv(rows);
    json summary = scaling_summary(rows);
    if (a.out.empty()) {
        out << csv;
        err << summary.dump(2) << "\n";
    } else {
        write_file_atomic(fs::path(a.out) / "bench.csv", csv);
        write_file_atomic(fs::path(a.out) / "scaling.json", summary.dump(2) + "\n");
        out << summary.dump(2) << "\n";
    }
    return exit_code::ok;
}

int exit_for(const Error& e) {
    return e.kind() == ErrorKind::FixtureMissing ? exit_code::fixture_missing : exit_code::error;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Memory-forensics triage over Volatility 3 JSON output", "spectre"};
    app.set_version_flag("--version", std::string(SPECTRE_VERSION));
    app.require_subcommand(1);

    AnalyzeArgs analyze;
    auto* c_analyze = app.add_subcommand("analyze", "Run the anomaly rules over one snapshot directory");
    c_analyze->add_option("--snapshot", analyze.snapshot, "Snapshot directory")->required();
    c_analyze->add_option("--label", analyze.label, "Snapshot label (default: directory name)");
    c_analyze->add_option("--enrich", analyze.enrich, "Enrich findings with IP intelligence: live or offline");
    c_analyze->add_option("--fixtures", analyze.fixtures, "Fixture directory for offline enrichment");
    analyze.rules.add(c_analyze);
    analyze.output.add(c_analyze);

    DeltaArgs delta;
    auto* c_delta = app.add_subcommand("delta", "Compare two snapshot directories");
    c_delta->add_option("--before", delta.before, "Earlier snapshot directory")->required();
    c_delta->add_option("--after", delta.after, "Later snapshot directory")->required();
    c_delta->add_option("--before-label", delta.before_label, "Label of the earlier snapshot")->capture_default_str();
    c_delta->add_option("--after-label", delta.after_label, "Label of the later snapshot")->capture_default_str();
    delta.rules.add(c_delta);
    delta.output.add(c_delta);

    TimelineArgs timeline;
    auto* c_timeline = app.add_subcommand("timeline", "Trend analysis over an ordered list of snapshot directories");
    c_timeline->add_option("--snapshots", timeline.snapshots, "Snapshot directories in order")->required();
    c_timeline->add_flag("--sort", timeline.sort, "Order by captured_at, then label, instead of argument order");
    c_timeline->add_option("--factor", timeline.factor, "Median deviation factor for flagged points")
        ->capture_default_str();
    c_timeline->add_option("--top-n", timeline.top_n, "Process lines drawn in timeline.svg")->capture_default_str();
    timeline.rules.add(c_timeline);
    timeline.output.add(c_timeline);

    EmulateArgs emulate;
    auto* c_emulate = app.add_subcommand("emulate", "Write a seeded Volatility-compatible corpus");
    c_emulate->add_option("--scenario", emulate.scenario,
                          "baseline, credential_dump, rundll32_process, rundll32_child or cmdline_ip")
        ->capture_default_str();
    c_emulate->add_option("--seed", emulate.seed, "Generator seed")->capture_default_str();
    c_emulate->add_option("--n", emulate.n, "Baseline process count")->capture_default_str();
    c_emulate->add_option("--connections", emulate.connections, "Connection count (default: 2n)");
    c_emulate->add_option("--malicious-ips", emulate.malicious_file, "Malicious address list")->check(CLI::ExistingFile);
    c_emulate->add_option("--benign-ips", emulate.benign_file, "Benign address list")->check(CLI::ExistingFile);
    c_emulate->add_option("--ratio", emulate.ratio, "Share of connections to malicious addresses")
        ->capture_default_str();
    c_emulate->add_option("--port-zero", emulate.port_zero, "Netscan-only UDP port-0 rows to plant")
        ->capture_default_str();
    c_emulate->add_option("--users", emulate.users, "User count (default: 6)");
    c_emulate->add_option("--modules", emulate.modules, "Module count (default: n)");
    c_emulate->add_option("--registry", emulate.registry, "Registry entry count (default: n)");
    c_emulate->add_option("--window-end", emulate.window_end,
                          "End of the timestamp window, ISO-8601 or 'now' (default: 2024-10-20T12:00:00Z)");
    c_emulate->add_option("--sequence", emulate.sequence, "Write k snapshots snap-000.. instead of one corpus");
    c_emulate->add_option("--churn", emulate.churn, "Per-class churn between sequence snapshots")
        ->capture_default_str();
    c_emulate->add_option("--bench", emulate.bench, "Write the benchmark corpus for scale n");
    c_emulate->add_option("--out", emulate.out, "Output directory")->required();

    IpArgs ip;
    auto* c_ip = app.add_subcommand("ip", "Look up one address");
    c_ip->add_option("--addr", ip.addr, "IPv4 or IPv6 address")->required();
    c_ip->add_flag("--offline", ip.offline, "Read fixtures instead of querying providers");
    c_ip->add_option("--fixtures", ip.fixtures, "Fixture directory for --offline");
    c_ip->add_flag("--lenient", ip.lenient, "With --offline, report a missing fixture as notes instead of failing");

    BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench", "Time every pipeline stage at several scales");
    c_bench->add_option("--scales", bench.scales, "Comma-separated scales")->capture_default_str();
    c_bench->add_option("--repeat", bench.repeat, "Repetitions per scale")->capture_default_str();
    c_bench->add_option("--seed", bench.seed, "Base seed")->capture_default_str();
    c_bench->add_option("--out", bench.out, "Directory for bench.csv and scaling.json (default: stdout/stderr)");
    c_bench->add_option("--work-dir", bench.work_dir, "Directory for generated corpora (default: a temp dir)");
    c_bench->add_flag("--keep", bench.keep, "Keep the generated corpora");

    std::vector<std::string> argv_store = args.empty() ? std::vector<std::string>{"spectre"} : args;
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_code::ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_code::ok;
    } catch (const CLI::CallForVersion&) {
        out << SPECTRE_VERSION << "\n";
        return exit_code::ok;
    } catch (const CLI::ParseError& e) {
        err << "spectre: " << e.what() << "\n";
        if (auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front())
            err << "Run '" << sub->get_name() << " --help' for usage.\n";
        return exit_code::usage;
    }

    try {
        if (c_analyze->parsed()) return cmd_analyze(analyze, out);
        if (c_delta->parsed()) return cmd_delta(delta, out);
        if (c_timeline->parsed()) return cmd_timeline(timeline, out);
        if (c_emulate->parsed()) return cmd_emulate(emulate, out);
        if (c_ip->parsed()) return cmd_ip(ip, out);
        if (c_bench->parsed()) return cmd_bench(bench, out, err);
    } catch (const UsageError& e) {
        err << "spectre: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const Error& e) {
        err << "spectre: " << e.what() << "\n";
        return exit_for(e);
    } catch (const std::exception& e) {
        err << "spectre: " << e.what() << "\n";
        return exit_code::error;
    }
    return exit_code::usage;
}

}  // namespace spectre
