// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectre/delta.hpp"
#include "spectre/model.hpp"

namespace spectre {

struct TimelineOptions {
    /// A point is flagged when its count exceeds factor x median of its series
    /// or falls below median / factor.
    double deviation_factor = 3.0;
    /// Foreign addresses that mark a process point as malicious.
    std::vector<std::string> malicious_ips;
    /// Restrict the per-process series to these PIDs.
    std::optional<std::vector<std::int64_t>> pid_filter;
};

/// Connections owned by one process identity over the sequence. A connection
/// belongs to the first process in pre-order whose PID matches.
struct ProcessSeries {
    EntityKey identity;
    std::int64_t pid = 0;
    std::string image;
    std::vector<std::size_t> counts;             // length k
    std::vector<std::size_t> malicious_indices;  // ascending

    bool operator==(const ProcessSeries&) const = default;
};

struct FlaggedPoint {
    std::size_t index = 0;
    EntityClass cls = EntityClass::processes;
    std::string reason;

    bool operator==(const FlaggedPoint&) const = default;
};

struct TimelineSeries {
    std::vector<std::string> labels;
    std::array<std::vector<std::size_t>, std::size(kAllEntityClasses)> counts;  // each length k
    std::vector<DeltaSummary> deltas;                                          // length k - 1
    std::vector<ProcessSeries> processes;  // identities owning >= 1 connection, sorted by key
    std::vector<FlaggedPoint> flagged_points;
    double deviation_factor = 3.0;

    const std::vector<std::size_t>& count_series(EntityClass cls) const {
        return counts[static_cast<std::size_t>(cls)];
    }
    bool operator==(const TimelineSeries&) const = default;
};

/// Sorts by captured_at (snapshots with one first), then label.
void order_snapshots(std::vector<Snapshot>& snapshots);

/// Snapshots are taken in the given order. TooFewSnapshots below two;
/// LabelCollision on a repeated label.
TimelineSeries build_timeline(std::span<const Snapshot> snapshots, const TimelineOptions& options = {});

std::vector<ProcessSeries> connection_timeline(std::span<const Snapshot> snapshots, const TimelineOptions& options = {});

/// Median of `values` (mean of the middle pair for even sizes); 0 when empty.
double median(std::vector<std::size_t> values);

json to_json(const TimelineSeries& series);

}  // namespace spectre
