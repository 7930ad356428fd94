// SPDX-License-Identifier: Apache-2.0
//
// report.json assembly and the five static SVG plots. Renderers are pure:
// the same input always yields the same bytes. Element classes and data-*
// attributes are stable so tests (and other tools) can read values back;
// docs/report-schema.md lists them.
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectre/anomaly.hpp"
#include "spectre/delta.hpp"
#include "spectre/netintel.hpp"
#include "spectre/timeline.hpp"

namespace spectre {

inline constexpr int kCanvasWidth = 1200;
inline constexpr int kCanvasHeight = 700;

/// Severity palette used by the anomaly plot.
std::string_view severity_color(Severity severity) noexcept;
inline constexpr std::string_view kFlaggedColor = "#d62728";
inline constexpr std::string_view kCleanColor = "#1f77b4";

struct SnapshotSummary {
    std::string label;
    std::optional<Timestamp> captured_at;
    std::array<std::size_t, std::size(kAllEntityClasses)> counts{};
    std::vector<std::size_t> depth_histogram;  // [d] = processes at tree depth d
    std::size_t netstat_only = 0;
    std::size_t netscan_only = 0;
    std::size_t both_sources = 0;

    std::size_t count(EntityClass cls) const { return counts[static_cast<std::size_t>(cls)]; }
    bool operator==(const SnapshotSummary&) const = default;
};

SnapshotSummary summarize_snapshot(const Snapshot& snapshot);
json to_json(const SnapshotSummary& summary);

struct PlotOptions {
    std::size_t top_n = 10;  // timeline process lines
};

/// One bar group per entity class holding one bar per summary, plus a
/// process-depth histogram. EmptyInput when `summaries` is empty.
std::string render_memory_plot(std::span<const SnapshotSummary> summaries);

/// One stacked bar per firing rule, segments coloured by severity. No
/// findings renders an empty chart with an "all clear" annotation.
std::string render_anomaly_plot(const std::vector<Finding>& findings);

/// Processes flagged by `findings`: subjects of process findings plus the
/// owners (by PID) of flagged connections and modules.
std::vector<std::int64_t> flagged_pids(const Snapshot& snapshot, const std::vector<Finding>& findings);

/// One point per process with a create_time at (create_time, pid).
/// NoTimestampedProcesses when there is none.
std::string render_process_scatter(const Snapshot& snapshot, const std::vector<Finding>& findings = {});

/// Four bars (added, removed, updated, consistent) per entity class.
std::string render_delta_plot(const DeltaReport& report);

/// Count lines per class, the top-N process connection lines (by peak, then
/// key) plus an "others" line when more processes exist, malicious markers
/// and flagged-point markers.
std::string render_timeline_plot(const TimelineSeries& series, const PlotOptions& options = {});

// -- report ----------------------------------------------------------------

struct AnalysisReport {
    std::string tool_version = SPECTRE_VERSION;
    Timestamp generated_at{};
    RuleConfig config;
    std::vector<SnapshotSummary> snapshots;
    std::vector<EnrichedFinding> findings;
    std::optional<SourceMode> enrichment;  // set when findings were enriched
    std::vector<DeltaReport> deltas;
    std::optional<TimelineSeries> timeline;
};

/// sha256 of the canonical JSON of `cfg`.
std::string config_digest(const RuleConfig& cfg);

json to_json(const AnalysisReport& report);

std::vector<EnrichedFinding> unenriched(const std::vector<Finding>& findings);

struct ReportRequest {
    bool svg = false;
    /// Needed for scatter.svg.
    const Snapshot* scatter_snapshot = nullptr;
    PlotOptions plot;
};

struct WrittenFile {
    std::string name;  // relative to out_dir
    std::string sha256;
    std::size_t bytes = 0;
};

struct ReportManifest {
    std::vector<WrittenFile> files;
    std::vector<std::pair<std::string, std::string>> skipped;  // (file, reason)
};

json to_json(const ReportManifest& manifest);

/// Writes report.json and, when requested, memory.svg, anomaly.svg,
/// scatter.svg, delta.svg and timeline.svg for the parts the report holds.
/// Plots whose input is unusable are listed as skipped. Files are written
/// atomically; IoError on failure.
ReportManifest write_report(const AnalysisReport& report, const std::filesystem::path& out_dir,
                            const ReportRequest& request = {});

}  // namespace spectre
