// SPDX-License-Identifier: Apache-2.0
#include "spectre/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "spectre/error.hpp"
#include "spectre/fsutil.hpp"
#include "svg.hpp"

namespace spectre {

namespace fs = std::filesystem;
using svg::Attrs;
using svg::Document;
using svg::num;

std::string_view severity_color(Severity severity) noexcept {
    switch (severity) {
        case Severity::high: return "#d62728";
        case Severity::medium: return "#ff7f0e";
        case Severity::low: return "#1f77b4";
    }
    return "#1f77b4";
}

namespace {

std::string class_color(EntityClass cls) {
    switch (cls) {
        case EntityClass::processes: return "#4c72b0";
        case EntityClass::connections: return "#dd8452";
        case EntityClass::users: return "#55a868";
        case EntityClass::modules: return "#c44e52";
        case EntityClass::registry: return "#8172b3";
    }
    return "#4c72b0";
}

constexpr const char* kCategoryNames[] = {"added", "removed", "updated", "consistent"};
constexpr const char* kCategoryColors[] = {"#2ca02c", "#d62728", "#ff7f0e", "#7f7f7f"};
constexpr const char* kLinePalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b",
                                        "#e377c2", "#bcbd22", "#17becf", "#393b79", "#637939"};

struct Frame {
    double x0, y0, x1, y1;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
};

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

/// Left axis from 0 to axis.top plus the baseline; returns the scale.
void draw_value_axis(Document& d, const Frame& f, const svg::Axis& axis, const std::string& label) {
    d.open("g", {{"class", "axis axis-y"}});
    d.element("line", {{"x1", num(f.x0)}, {"y1", num(f.y0)}, {"x2", num(f.x0)}, {"y2", num(f.y1)}, {"stroke", "#333333"}});
    d.element("line", {{"x1", num(f.x0)}, {"y1", num(f.y1)}, {"x2", num(f.x1)}, {"y2", num(f.y1)}, {"stroke", "#333333"}});
    for (double v = 0; v <= axis.top + axis.step / 2; v += axis.step) {
        double y = f.y1 - v / axis.top * f.height();
        d.element("line", {{"x1", num(f.x0 - 5)}, {"y1", num(y)}, {"x2", num(f.x0)}, {"y2", num(y)}, {"stroke", "#333333"}});
        d.element("line", {{"class", "grid"}, {"x1", num(f.x0)}, {"y1", num(y)}, {"x2", num(f.x1)}, {"y2", num(y)},
                           {"stroke", "#e5e5e5"}});
        d.text(f.x0 - 8, y + 4, tick_label(v), {{"class", "tick-label"}, {"text-anchor", "end"}, {"font-size", "11"}});
    }
    d.text(f.x0 - 55, (f.y0 + f.y1) / 2, label,
           {{"class", "axis-label"},
            {"text-anchor", "middle"},
            {"font-size", "13"},
            {"transform", "rotate(-90 " + num(f.x0 - 55) + " " + num((f.y0 + f.y1) / 2) + ")"}});
    d.close();
}

double scale_y(const Frame& f, const svg::Axis& axis, double v) { return f.y1 - v / axis.top * f.height(); }

void legend(Document& d, double x, double y, const std::vector<std::pair<std::string, std::string>>& entries) {
    d.open("g", {{"class", "legend"}});
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double yy = y + static_cast<double>(i) * 18;
        d.element("rect", {{"class", "legend-swatch"}, {"x", num(x)}, {"y", num(yy - 10)}, {"width", "12"},
                           {"height", "12"}, {"fill", entries[i].second}});
        d.text(x + 18, yy, entries[i].first, {{"class", "legend-label"}, {"font-size", "12"}});
    }
    d.close();
}

/// Grouped bars: groups[g].values[b]. Used by the memory and delta plots.
struct BarSpec {
    std::string label;
    std::string data_key;  // attribute name, e.g. data-snapshot
    std::string data_value;
    std::size_t value = 0;
    std::string fill;
    std::string tooltip;
    std::string css = "bar";
    std::string fill_opacity = "1";
};

struct GroupSpec {
    std::string css;
    std::string data_key;
    std::string data_value;
    std::string label;
    std::vector<BarSpec> bars;
};

void grouped_bars(Document& d, const Frame& f, const std::vector<GroupSpec>& groups, const std::string& axis_label) {
    std::size_t max = 0;
    for (const auto& g : groups)
        for (const auto& b : g.bars) max = std::max(max, b.value);
    auto axis = svg::nice_axis(static_cast<double>(max));
    draw_value_axis(d, f, axis, axis_label);
    const double group_w = f.width() / static_cast<double>(std::max<std::size_t>(1, groups.size()));
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        const double gx = f.x0 + group_w * static_cast<double>(gi);
        const double n = static_cast<double>(std::max<std::size_t>(1, g.bars.size()));
        const double bar_w = group_w * 0.8 / n;
        d.open("g", {{"class", g.css}, {g.data_key, g.data_value}});
        for (std::size_t bi = 0; bi < g.bars.size(); ++bi) {
            const auto& b = g.bars[bi];
            double x = gx + group_w * 0.1 + bar_w * static_cast<double>(bi);
            double y = scale_y(f, axis, static_cast<double>(b.value));
            d.element("rect",
                      {{"class", b.css},
                       {b.data_key, b.data_value},
                       {"data-value", std::to_string(b.value)},
                       {"x", num(x)},
                       {"y", num(y)},
                       {"width", num(bar_w * 0.92)},
                       {"height", num(f.y1 - y)},
                       {"fill", b.fill},
                       {"fill-opacity", b.fill_opacity}},
                      b.tooltip);
            d.text(x + bar_w * 0.46, y - 4, std::to_string(b.value),
                   {{"class", "value-label"}, {"text-anchor", "middle"}, {"font-size", "10"}});
        }
        d.text(gx + group_w / 2, f.y1 + 20, g.label,
               {{"class", "group-label"}, {"text-anchor", "middle"}, {"font-size", "12"}});
        d.close();
    }
}

std::string opacity_for(std::size_t j, std::size_t m) {
    return num(1.0 - 0.6 * static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(1, m)));
}

}  // namespace

// -- summaries -------------------------------------------------------------

SnapshotSummary summarize_snapshot(const Snapshot& s) {
    SnapshotSummary out;
    out.label = s.label;
    out.captured_at = s.captured_at;
    for (auto cls : kAllEntityClasses) out.counts[static_cast<std::size_t>(cls)] = entity_count(s, cls);
    for (const auto& fp : flatten(s.processes)) {
        auto d = static_cast<std::size_t>(fp.depth);
        if (out.depth_histogram.size() <= d) out.depth_histogram.resize(d + 1, 0);
        ++out.depth_histogram[d];
    }
    for (const auto& c : s.connections) {
        if (c.seen_by_netstat && c.seen_by_netscan)
            ++out.both_sources;
        else if (c.seen_by_netstat)
            ++out.netstat_only;
        else
            ++out.netscan_only;
    }
    return out;
}

json to_json(const SnapshotSummary& s) {
    json counts = json::object();
    for (auto cls : kAllEntityClasses) counts[std::string(to_string(cls))] = s.count(cls);
    return json{
        {"label", s.label},
        {"captured_at", s.captured_at ? json(format_timestamp(*s.captured_at)) : json(nullptr)},
        {"counts", std::move(counts)},
        {"depth_histogram", s.depth_histogram},
        {"connection_sources",
         {{"netstat_only", s.netstat_only}, {"netscan_only", s.netscan_only}, {"both", s.both_sources}}},
    };
}

// -- plots -----------------------------------------------------------------

std::string render_memory_plot(std::span<const SnapshotSummary> summaries) {
    if (summaries.empty()) throw Error(ErrorKind::EmptyInput, "memory plot needs at least one snapshot summary");
    std::string title = "Memory analysis: " + summaries.front().label;
    if (summaries.size() > 1) title += " .. " + summaries.back().label;
    Document d(kCanvasWidth, kCanvasHeight, "memory", title);
    const std::size_t m = summaries.size();

    std::vector<GroupSpec> groups;
    for (auto cls : kAllEntityClasses) {
        std::string name(to_string(cls));
        GroupSpec g{"bar-group", "data-class", name, name, {}};
        for (std::size_t j = 0; j < m; ++j) {
            auto v = summaries[j].count(cls);
            g.bars.push_back({summaries[j].label, "data-snapshot", summaries[j].label, v, class_color(cls),
                              name + " in " + summaries[j].label + ": " + std::to_string(v), "bar", opacity_for(j, m)});
        }
        groups.push_back(std::move(g));
    }
    d.open("g", {{"class", "panel"}, {"data-panel", "entities"}});
    grouped_bars(d, {90, 70, 760, 600}, groups, "entities");
    d.close();

    std::size_t depths = 0;
    for (const auto& s : summaries) depths = std::max(depths, s.depth_histogram.size());
    std::vector<GroupSpec> hist;
    for (std::size_t depth = 0; depth < depths; ++depth) {
        GroupSpec g{"depth-group", "data-depth", std::to_string(depth), std::to_string(depth), {}};
        for (std::size_t j = 0; j < m; ++j) {
            const auto& h = summaries[j].depth_histogram;
            auto v = depth < h.size() ? h[depth] : 0;
            g.bars.push_back({summaries[j].label, "data-snapshot", summaries[j].label, v, "#4c72b0",
                              "depth " + std::to_string(depth) + " in " + summaries[j].label + ": " +
                                  std::to_string(v) + " processes",
                              "depth-bar", opacity_for(j, m)});
        }
        hist.push_back(std::move(g));
    }
    d.open("g", {{"class", "panel"}, {"data-panel", "depth-histogram"}});
    grouped_bars(d, {860, 70, 1160, 600}, hist, "processes");
    d.text(1010, 650, "process tree depth", {{"class", "axis-label"}, {"text-anchor", "middle"}, {"font-size", "13"}});
    d.close();

    if (m > 1) {
        std::vector<std::pair<std::string, std::string>> entries;
        for (std::size_t j = 0; j < m; ++j) entries.push_back({summaries[j].label, "#4c72b0"});
        legend(d, 100, 660, entries);
    }
    return d.finish();
}

std::string render_anomaly_plot(const std::vector<Finding>& findings) {
    Document d(kCanvasWidth, kCanvasHeight, "anomaly", "Anomaly analysis");
    std::map<RuleId, std::array<std::size_t, 3>> counts;
    for (const auto& f : findings) ++counts[f.rule_id][static_cast<std::size_t>(f.severity)];

    const Frame f{90, 70, 1160, 600};
    std::size_t max = 0;
    for (const auto& [_, c] : counts) max = std::max(max, c[0] + c[1] + c[2]);
    auto axis = svg::nice_axis(static_cast<double>(max));
    draw_value_axis(d, f, axis, "findings");

    if (counts.empty()) {
        d.text((f.x0 + f.x1) / 2, (f.y0 + f.y1) / 2, "All clear: no findings",
               {{"class", "annotation"}, {"text-anchor", "middle"}, {"font-size", "22"}, {"fill", "#2ca02c"}});
    }
    const double slot = f.width() / static_cast<double>(std::max<std::size_t>(1, counts.size()));
    const double bar_w = std::min(120.0, slot * 0.6);
    std::size_t i = 0;
    for (const auto& [rule, c] : counts) {
        std::string name(to_string(rule));
        std::size_t total = c[0] + c[1] + c[2];
        double x = f.x0 + slot * static_cast<double>(i) + (slot - bar_w) / 2;
        d.open("g", {{"class", "bar"}, {"data-rule", name}, {"data-count", std::to_string(total)}},
               name + ": " + std::to_string(total) + " finding" + (total == 1 ? "" : "s"));
        double base = 0;
        for (auto sev : {Severity::high, Severity::medium, Severity::low}) {
            auto n = c[static_cast<std::size_t>(sev)];
            if (n == 0) continue;
            double y_top = scale_y(f, axis, base + static_cast<double>(n));
            double y_bottom = scale_y(f, axis, base);
            d.element("rect",
                      {{"class", "segment"},
                       {"data-severity", std::string(to_string(sev))},
                       {"data-count", std::to_string(n)},
                       {"x", num(x)},
                       {"y", num(y_top)},
                       {"width", num(bar_w)},
                       {"height", num(y_bottom - y_top)},
                       {"fill", std::string(severity_color(sev))}},
                      name + ": " + std::to_string(n) + " " + std::string(to_string(sev)));
            base += static_cast<double>(n);
        }
        d.text(x + bar_w / 2, scale_y(f, axis, base) - 5, std::to_string(total),
               {{"class", "value-label"}, {"text-anchor", "middle"}, {"font-size", "12"}});
        d.text(x + bar_w / 2, f.y1 + 20, name, {{"class", "group-label"}, {"text-anchor", "middle"}, {"font-size", "11"}});
        d.close();
        ++i;
    }
    legend(d, 1000, 640,
           {{"high", std::string(severity_color(Severity::high))},
            {"medium", std::string(severity_color(Severity::medium))},
            {"low", std::string(severity_color(Severity::low))}});
    return d.finish();
}

std::vector<std::int64_t> flagged_pids(const Snapshot& s, const std::vector<Finding>& findings) {
    std::set<std::string> process_subjects, connection_subjects, module_subjects;
    for (const auto& f : findings) {
        switch (f.subject.cls) {
            case EntityClass::processes: process_subjects.insert(f.subject.key); break;
            case EntityClass::connections: connection_subjects.insert(f.subject.key); break;
            case EntityClass::modules: module_subjects.insert(f.subject.key); break;
            default: break;
        }
    }
    std::set<std::int64_t> pids;
    for (const auto& fp : flatten(s.processes))
        if (process_subjects.contains(process_key(*fp.node).key)) pids.insert(fp.node->pid);
    for (const auto& c : s.connections)
        if (c.pid && connection_subjects.contains(connection_key(c).key)) pids.insert(*c.pid);
    for (const auto& m : s.modules)
        if (module_subjects.contains(module_key(m).key)) pids.insert(m.pid);
    return {pids.begin(), pids.end()};
}

std::string render_process_scatter(const Snapshot& s, const std::vector<Finding>& findings) {
    auto flat = flatten(s.processes);
    std::vector<const ProcessNode*> points;
    for (const auto& fp : flat)
        if (fp.node->create_time) points.push_back(fp.node);
    if (points.empty())
        throw Error(ErrorKind::NoTimestampedProcesses, "no process in " + s.label + " has a CreateTime");
    auto flagged_list = flagged_pids(s, findings);
    std::unordered_set<std::int64_t> flagged(flagged_list.begin(), flagged_list.end());

    std::int64_t tmin = unix_seconds(*points.front()->create_time), tmax = tmin;
    std::int64_t pmin = points.front()->pid, pmax = pmin;
    for (const auto* p : points) {
        auto t = unix_seconds(*p->create_time);
        tmin = std::min(tmin, t);
        tmax = std::max(tmax, t);
        pmin = std::min(pmin, p->pid);
        pmax = std::max(pmax, p->pid);
    }
    if (tmin == tmax) {
        tmin -= 1800;
        tmax += 1800;
    }
    if (pmin == pmax) {
        pmin = std::max<std::int64_t>(0, pmin - 1);
        pmax += 1;
    }
    const Frame f{90, 70, 1160, 590};
    auto x_of = [&](std::int64_t t) {
        return f.x0 + 10 + static_cast<double>(t - tmin) / static_cast<double>(tmax - tmin) * (f.width() - 20);
    };
    auto y_of = [&](std::int64_t pid) {
        return f.y1 - 10 - static_cast<double>(pid - pmin) / static_cast<double>(pmax - pmin) * (f.height() - 20);
    };

    Document d(kCanvasWidth, kCanvasHeight, "scatter", "Processes of " + s.label + " by creation time");
    d.open("g", {{"class", "axis"}});
    d.element("line", {{"x1", num(f.x0)}, {"y1", num(f.y0)}, {"x2", num(f.x0)}, {"y2", num(f.y1)}, {"stroke", "#333333"}});
    d.element("line", {{"x1", num(f.x0)}, {"y1", num(f.y1)}, {"x2", num(f.x1)}, {"y2", num(f.y1)}, {"stroke", "#333333"}});
    for (int i = 0; i <= 4; ++i) {
        std::int64_t t = tmin + (tmax - tmin) * i / 4;
        double x = x_of(t);
        d.element("line", {{"x1", num(x)}, {"y1", num(f.y1)}, {"x2", num(x)}, {"y2", num(f.y1 + 5)}, {"stroke", "#333333"}});
        auto label = format_timestamp(timestamp_from_unix(t)).substr(0, 16);
        label[10] = ' ';
        d.text(x, f.y1 + 20, label, {{"class", "tick-label"}, {"text-anchor", "middle"}, {"font-size", "11"}});
        std::int64_t pid = pmin + (pmax - pmin) * i / 4;
        double y = y_of(pid);
        d.element("line", {{"x1", num(f.x0 - 5)}, {"y1", num(y)}, {"x2", num(f.x0)}, {"y2", num(y)}, {"stroke", "#333333"}});
        d.text(f.x0 - 8, y + 4, std::to_string(pid), {{"class", "tick-label"}, {"text-anchor", "end"}, {"font-size", "11"}});
    }
    d.text((f.x0 + f.x1) / 2, f.y1 + 45, "CreateTime (UTC)",
           {{"class", "axis-label"}, {"text-anchor", "middle"}, {"font-size", "13"}});
    d.text(f.x0 - 60, (f.y0 + f.y1) / 2, "PID",
           {{"class", "axis-label"},
            {"text-anchor", "middle"},
            {"font-size", "13"},
            {"transform", "rotate(-90 " + num(f.x0 - 60) + " " + num((f.y0 + f.y1) / 2) + ")"}});
    d.close();

    d.open("g", {{"class", "points"}});
    for (const auto* p : points) {
        bool is_flagged = flagged.contains(p->pid);
        auto created = format_timestamp(*p->create_time);
        d.element("circle",
                  {{"class", "point"},
                   {"data-pid", std::to_string(p->pid)},
                   {"data-create-time", created},
                   {"data-flagged", is_flagged ? "true" : "false"},
                   {"cx", num(x_of(unix_seconds(*p->create_time)))},
                   {"cy", num(y_of(p->pid))},
                   {"r", is_flagged ? "6" : "4"},
                   {"fill", std::string(is_flagged ? kFlaggedColor : kCleanColor)}},
                  p->image_file_name + " (PID " + std::to_string(p->pid) + ") created " + created +
                      (is_flagged ? ", flagged" : ""));
    }
    d.close();
    std::size_t omitted = flat.size() - points.size();
    d.text(f.x0, 680, std::to_string(omitted) + " process" + (omitted == 1 ? "" : "es") + " without CreateTime omitted",
           {{"class", "footnote"}, {"data-omitted", std::to_string(omitted)}, {"font-size", "11"}});
    legend(d, 1000, 640, {{"flagged", std::string(kFlaggedColor)}, {"clean", std::string(kCleanColor)}});
    return d.finish();
}

std::string render_delta_plot(const DeltaReport& report) {
    Document d(kCanvasWidth, kCanvasHeight, "delta",
               "Delta analysis: " + report.before_label + " -> " + report.after_label);
    auto summary = summarize_delta(report);
    std::vector<GroupSpec> groups;
    for (auto cls : kAllEntityClasses) {
        std::string name(to_string(cls));
        const auto& c = summary[static_cast<std::size_t>(cls)];
        std::size_t values[] = {c.added, c.removed, c.updated, c.consistent};
        GroupSpec g{"bar-group", "data-class", name, name, {}};
        for (std::size_t k = 0; k < 4; ++k)
            g.bars.push_back({kCategoryNames[k], "data-category", kCategoryNames[k], values[k], kCategoryColors[k],
                              name + " " + kCategoryNames[k] + ": " + std::to_string(values[k])});
        groups.push_back(std::move(g));
    }
    grouped_bars(d, {90, 70, 1160, 600}, groups, "entities");
    legend(d, 100, 640,
           {{"added", kCategoryColors[0]}, {"removed", kCategoryColors[1]}});
    legend(d, 220, 640, {{"updated", kCategoryColors[2]}, {"consistent", kCategoryColors[3]}});
    return d.finish();
}

std::string render_timeline_plot(const TimelineSeries& t, const PlotOptions& options) {
    Document d(kCanvasWidth, kCanvasHeight, "timeline", "Processes and connections timeline");
    const std::size_t k = t.labels.size();
    auto join = [](const std::vector<std::size_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };

    auto draw_panel = [&](const Frame& f, std::size_t max, const std::string& label) {
        auto axis = svg::nice_axis(static_cast<double>(max));
        draw_value_axis(d, f, axis, label);
        for (std::size_t i = 0; i < k; ++i) {
            double x = k > 1 ? f.x0 + 20 + (f.width() - 40) * static_cast<double>(i) / static_cast<double>(k - 1)
                             : (f.x0 + f.x1) / 2;
            d.text(x, f.y1 + 16, t.labels[i], {{"class", "tick-label"}, {"text-anchor", "middle"}, {"font-size", "10"}});
        }
        return axis;
    };
    auto x_at = [&](const Frame& f, std::size_t i) {
        return k > 1 ? f.x0 + 20 + (f.width() - 40) * static_cast<double>(i) / static_cast<double>(k - 1)
                     : (f.x0 + f.x1) / 2;
    };
    auto points_attr = [&](const Frame& f, const svg::Axis& axis, const std::vector<std::size_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i)
            s += (i ? " " : "") + num(x_at(f, i)) + "," + num(scale_y(f, axis, static_cast<double>(v[i])));
        return s;
    };

    // entity classes
    const Frame top{90, 60, 1000, 320};
    std::size_t max_count = 0;
    for (auto cls : kAllEntityClasses)
        for (auto v : t.count_series(cls)) max_count = std::max(max_count, v);
    d.open("g", {{"class", "panel"}, {"data-panel", "classes"}});
    auto top_axis = draw_panel(top, max_count, "entities");
    std::vector<std::pair<std::string, std::string>> class_legend;
    for (auto cls : kAllEntityClasses) {
        std::string name(to_string(cls));
        const auto& v = t.count_series(cls);
        d.element("polyline",
                  {{"class", "class-line"},
                   {"data-class", name},
                   {"data-values", join(v)},
                   {"points", points_attr(top, top_axis, v)},
                   {"fill", "none"},
                   {"stroke", class_color(cls)},
                   {"stroke-width", "2"}},
                  name + ": " + join(v));
        class_legend.push_back({name, class_color(cls)});
    }
    for (const auto& fp : t.flagged_points) {
        double v = static_cast<double>(t.count_series(fp.cls)[fp.index]);
        d.element("circle",
                  {{"class", "flag-marker"},
                   {"data-index", std::to_string(fp.index)},
                   {"data-class", std::string(to_string(fp.cls))},
                   {"cx", num(x_at(top, fp.index))},
                   {"cy", num(scale_y(top, top_axis, v))},
                   {"r", "8"},
                   {"fill", "none"},
                   {"stroke", "#d62728"},
                   {"stroke-width", "2"}},
                  fp.reason);
    }
    d.close();
    legend(d, 1020, 80, class_legend);

    // per-process connections
    std::vector<const ProcessSeries*> ranked;
    for (const auto& p : t.processes) ranked.push_back(&p);
    auto peak = [](const ProcessSeries* p) { return *std::max_element(p->counts.begin(), p->counts.end()); };
    std::stable_sort(ranked.begin(), ranked.end(), [&](const ProcessSeries* a, const ProcessSeries* b) {
        auto pa = peak(a), pb = peak(b);
        if (pa != pb) return pa > pb;
        return a->identity.key < b->identity.key;
    });
    const std::size_t shown = std::min(options.top_n, ranked.size());
    std::vector<std::size_t> others(k, 0);
    for (std::size_t r = shown; r < ranked.size(); ++r)
        for (std::size_t i = 0; i < k; ++i) others[i] += ranked[r]->counts[i];
    const bool has_others = ranked.size() > shown;

    const Frame bottom{90, 390, 1000, 640};
    std::size_t max_proc = 0;
    for (std::size_t r = 0; r < shown; ++r) max_proc = std::max(max_proc, peak(ranked[r]));
    if (has_others) max_proc = std::max(max_proc, *std::max_element(others.begin(), others.end()));
    for (const auto& p : t.processes)
        for (auto i : p.malicious_indices) max_proc = std::max(max_proc, p.counts[i]);
    d.open("g", {{"class", "panel"}, {"data-panel", "process-connections"}});
    auto bottom_axis = draw_panel(bottom, max_proc, "connections");
    std::vector<std::pair<std::string, std::string>> proc_legend;
    for (std::size_t r = 0; r < shown; ++r) {
        const auto& p = *ranked[r];
        std::string color = kLinePalette[r % std::size(kLinePalette)];
        std::string name = p.image + " (" + std::to_string(p.pid) + ")";
        d.element("polyline",
                  {{"class", "process-line"},
                   {"data-key", p.identity.key},
                   {"data-pid", std::to_string(p.pid)},
                   {"data-values", join(p.counts)},
                   {"points", points_attr(bottom, bottom_axis, p.counts)},
                   {"fill", "none"},
                   {"stroke", color},
                   {"stroke-width", "1.5"}},
                  name + ": " + join(p.counts));
        proc_legend.push_back({name, color});
    }
    if (has_others) {
        d.element("polyline",
                  {{"class", "others-line"},
                   {"data-processes", std::to_string(ranked.size() - shown)},
                   {"data-values", join(others)},
                   {"points", points_attr(bottom, bottom_axis, others)},
                   {"fill", "none"},
                   {"stroke", "#999999"},
                   {"stroke-dasharray", "6 4"},
                   {"stroke-width", "1.5"}},
                  "others (" + std::to_string(ranked.size() - shown) + " processes): " + join(others));
        proc_legend.push_back({"others", "#999999"});
    }
    for (const auto& p : t.processes) {
        for (auto i : p.malicious_indices) {
            double cx = x_at(bottom, i);
            double cy = scale_y(bottom, bottom_axis, static_cast<double>(p.counts[i]));
            std::string path = "M " + num(cx) + " " + num(cy - 7) + " L " + num(cx + 7) + " " + num(cy) + " L " +
                               num(cx) + " " + num(cy + 7) + " L " + num(cx - 7) + " " + num(cy) + " Z";
            d.element("path",
                      {{"class", "malicious-marker"},
                       {"data-index", std::to_string(i)},
                       {"data-key", p.identity.key},
                       {"data-pid", std::to_string(p.pid)},
                       {"d", path},
                       {"fill", "#d62728"}},
                      p.image + " (PID " + std::to_string(p.pid) + ") talks to a malicious address in " + t.labels[i]);
        }
    }
    d.close();
    legend(d, 1020, 400, proc_legend);
    return d.finish();
}

// -- report ----------------------------------------------------------------

std::string config_digest(const RuleConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

std::vector<EnrichedFinding> unenriched(const std::vector<Finding>& findings) {
    std::vector<EnrichedFinding> out;
    out.reserve(findings.size());
    for (const auto& f : findings) out.push_back({f, std::nullopt});
    return out;
}

json to_json(const AnalysisReport& r) {
    json snapshots = json::array();
    for (const auto& s : r.snapshots) snapshots.push_back(to_json(s));
    json findings = json::array();
    json counts = json::object();
    for (auto rule : kAllRules) counts[std::string(to_string(rule))] = 0;
    for (const auto& f : r.findings) {
        findings.push_back(to_json(f));
        counts[std::string(to_string(f.finding.rule_id))] = counts[std::string(to_string(f.finding.rule_id))].get<int>() + 1;
    }
    json deltas = json::array();
    for (const auto& d : r.deltas) deltas.push_back(to_json(d));
    return json{
        {"schema_version", 1},
        {"tool", {{"name", "spectre"}, {"version", r.tool_version}}},
        {"generated_at", format_timestamp(r.generated_at)},
        {"config_digest", config_digest(r.config)},
        {"config", to_json(r.config)},
        {"snapshots", std::move(snapshots)},
        {"findings", std::move(findings)},
        {"finding_counts", std::move(counts)},
        {"enrichment", r.enrichment ? json(std::string(to_string(*r.enrichment))) : json(nullptr)},
        {"deltas", std::move(deltas)},
        {"timeline", r.timeline ? to_json(*r.timeline) : json(nullptr)},
    };
}

json to_json(const ReportManifest& m) {
    json files = json::array();
    for (const auto& f : m.files) files.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    json skipped = json::array();
    for (const auto& [name, reason] : m.skipped) skipped.push_back({{"name", name}, {"reason", reason}});
    return json{{"files", std::move(files)}, {"skipped", std::move(skipped)}};
}

ReportManifest write_report(const AnalysisReport& report, const fs::path& out_dir, const ReportRequest& request) {
    ReportManifest manifest;
    auto emit = [&](const std::string& name, const std::string& content) {
        try {
            write_file_atomic(out_dir / name, content);
        } catch (const fs::filesystem_error& e) {
            throw Error(ErrorKind::IoError, e.what());
        }
        manifest.files.push_back({name, sha256_hex(content), content.size()});
    };
    emit("report.json", to_json(report).dump(2) + "\n");
    if (!request.svg) return manifest;

    auto attempt = [&](const std::string& name, auto&& render) {
        try {
            emit(name, render());
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::IoError) throw;
            manifest.skipped.push_back({name, e.what()});
        }
    };
    std::vector<Finding> findings;
    for (const auto& f : report.findings) findings.push_back(f.finding);

    attempt("memory.svg", [&] { return render_memory_plot(report.snapshots); });
    attempt("anomaly.svg", [&] { return render_anomaly_plot(findings); });
    if (request.scatter_snapshot)
        attempt("scatter.svg", [&] { return render_process_scatter(*request.scatter_snapshot, findings); });
    else
        manifest.skipped.push_back({"scatter.svg", "no snapshot supplied"});
    if (!report.deltas.empty())
        attempt("delta.svg", [&] { return render_delta_plot(report.deltas.front()); });
    else
        manifest.skipped.push_back({"delta.svg", "report holds no delta"});
    if (report.timeline)
        attempt("timeline.svg", [&] { return render_timeline_plot(*report.timeline, request.plot); });
    else
        manifest.skipped.push_back({"timeline.svg", "report holds no timeline"});
    return manifest;
}

}  // namespace spectre
