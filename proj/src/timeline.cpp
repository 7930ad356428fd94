// SPDX-License-Identifier: Apache-2.0
#include "spectre/timeline.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "spectre/error.hpp"
#include "spectre/ip.hpp"

namespace spectre {

void order_snapshots(std::vector<Snapshot>& snapshots) {
    std::stable_sort(snapshots.begin(), snapshots.end(), [](const Snapshot& a, const Snapshot& b) {
        auto rank = [](const Snapshot& s) { return s.captured_at ? 0 : 1; };
        if (rank(a) != rank(b)) return rank(a) < rank(b);
        if (a.captured_at && b.captured_at && *a.captured_at != *b.captured_at) return *a.captured_at < *b.captured_at;
        return a.label < b.label;
    });
}

double median(std::vector<std::size_t> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    auto n = values.size();
    if (n % 2 == 1) return static_cast<double>(values[n / 2]);
    return (static_cast<double>(values[n / 2 - 1]) + static_cast<double>(values[n / 2])) / 2.0;
}

namespace {

void check_sequence(std::span<const Snapshot> snapshots) {
    if (snapshots.size() < 2)
        throw Error(ErrorKind::TooFewSnapshots,
                    "need at least 2 snapshots, got " + std::to_string(snapshots.size()));
    std::set<std::string> labels;
    for (const auto& s : snapshots)
        if (!labels.insert(s.label).second)
            throw Error(ErrorKind::LabelCollision, "snapshot label \"" + s.label + "\" appears twice");
}

std::string format_number(double v) {
    std::ostringstream out;
    out.precision(10);
    out << v;
    return out.str();
}

}  // namespace

std::vector<ProcessSeries> connection_timeline(std::span<const Snapshot> snapshots, const TimelineOptions& options) {
    check_sequence(snapshots);
    std::unordered_set<std::string> malicious;
    for (const auto& ip : options.malicious_ips) malicious.insert(canonical_ip(ip));
    std::optional<std::unordered_set<std::int64_t>> filter;
    if (options.pid_filter) filter.emplace(options.pid_filter->begin(), options.pid_filter->end());

    const std::size_t k = snapshots.size();
    std::map<std::string, ProcessSeries> series;
    for (std::size_t i = 0; i < k; ++i) {
        std::unordered_map<std::int64_t, const ProcessNode*> by_pid;
        for (const auto& fp : flatten(snapshots[i].processes)) by_pid.emplace(fp.node->pid, fp.node);
        for (const auto& c : snapshots[i].connections) {
            if (!c.pid) continue;
            if (filter && !filter->contains(*c.pid)) continue;
            auto owner = by_pid.find(*c.pid);
            if (owner == by_pid.end()) continue;
            auto key = process_key(*owner->second);
            auto [it, fresh] = series.try_emplace(key.key);
            auto& ps = it->second;
            if (fresh) {
                ps.identity = key;
                ps.pid = owner->second->pid;
                ps.image = owner->second->image_file_name;
                ps.counts.assign(k, 0);
            }
            ++ps.counts[i];
            if (malicious.contains(canonical_ip(c.foreign_addr)) &&
                (ps.malicious_indices.empty() || ps.malicious_indices.back() != i))
                ps.malicious_indices.push_back(i);
        }
    }
    std::vector<ProcessSeries> out;
    out.reserve(series.size());
    for (auto& [_, ps] : series) out.push_back(std::move(ps));
    return out;
}

TimelineSeries build_timeline(std::span<const Snapshot> snapshots, const TimelineOptions& options) {
    check_sequence(snapshots);
    if (!(options.deviation_factor > 0.0))
        throw Error(ErrorKind::InvalidConfig, "deviation factor must be positive");
    TimelineSeries t;
    t.deviation_factor = options.deviation_factor;
    for (const auto& s : snapshots) t.labels.push_back(s.label);
    for (auto cls : kAllEntityClasses) {
        auto& series = t.counts[static_cast<std::size_t>(cls)];
        for (const auto& s : snapshots) series.push_back(entity_count(s, cls));
    }
    for (std::size_t i = 0; i + 1 < snapshots.size(); ++i)
        t.deltas.push_back(summarize_delta(diff_snapshots(snapshots[i], snapshots[i + 1])));
    t.processes = connection_timeline(snapshots, options);

    const double f = options.deviation_factor;
    for (auto cls : kAllEntityClasses) {
        const auto& series = t.count_series(cls);
        double med = median(series);
        for (std::size_t i = 0; i < series.size(); ++i) {
            double v = static_cast<double>(series[i]);
            if (v > f * med)
                t.flagged_points.push_back({i, cls,
                                            std::string(to_string(cls)) + " count " + std::to_string(series[i]) +
                                                " exceeds " + format_number(f) + "x median " + format_number(med)});
            else if (med > 0.0 && v < med / f)
                t.flagged_points.push_back({i, cls,
                                            std::string(to_string(cls)) + " count " + std::to_string(series[i]) +
                                                " is below median " + format_number(med) + " / " + format_number(f)});
        }
    }
    std::sort(t.flagged_points.begin(), t.flagged_points.end(), [](const FlaggedPoint& a, const FlaggedPoint& b) {
        return std::tie(a.index, a.cls) < std::tie(b.index, b.cls);
    });
    return t;
}

json to_json(const TimelineSeries& t) {
    json counts = json::object();
    for (auto cls : kAllEntityClasses) counts[std::string(to_string(cls))] = t.count_series(cls);
    json deltas = json::array();
    for (const auto& d : t.deltas) deltas.push_back(to_json(d));
    json processes = json::array();
    for (const auto& p : t.processes)
        processes.push_back({{"key", json::parse(p.identity.key)},
                             {"pid", p.pid},
                             {"image", p.image},
                             {"counts", p.counts},
                             {"malicious_indices", p.malicious_indices}});
    json flagged = json::array();
    for (const auto& fp : t.flagged_points)
        flagged.push_back({{"index", fp.index}, {"class", std::string(to_string(fp.cls))}, {"reason", fp.reason}});
    return json{
        {"labels", t.labels},
        {"counts", std::move(counts)},
        {"deltas", std::move(deltas)},
        {"processes", std::move(processes)},
        {"flagged_points", std::move(flagged)},
        {"deviation_factor", t.deviation_factor},
    };
}

}  // namespace spectre
