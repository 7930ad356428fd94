// SPDX-License-Identifier: Apache-2.0
#include "spectre/delta.hpp"

#include <map>
#include <unordered_map>
#include <unordered_set>

#include "spectre/error.hpp"
#include "spectre/ip.hpp"

namespace spectre {

namespace {

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

json opt_time(const std::optional<Timestamp>& ts) { return ts ? json(format_timestamp(*ts)) : json(nullptr); }

using FieldValues = std::vector<json>;
using Table = std::map<std::string, FieldValues>;

template <class Row, class KeyFn, class FieldsFn>
void insert_row(Table& table, const Row& row, KeyFn&& key_of, FieldsFn&& fields_of, const std::string& label) {
    auto key = key_of(row).key;
    if (!table.emplace(key, fields_of(row)).second)
        throw Error(ErrorKind::SchemaError, label + ": duplicate entity key " + key);
}

Table table_for(const Snapshot& s, EntityClass cls) {
    Table t;
    switch (cls) {
        case EntityClass::processes:
            for (const auto& fp : flatten(s.processes))
                insert_row(t, *fp.node, process_key,
                           [](const ProcessNode& n) {
                               return FieldValues{n.threads, opt(n.handles), opt_time(n.exit_time), opt(n.session_id)};
                           },
                           s.label);
            break;
        case EntityClass::connections:
            for (const auto& c : s.connections)
                insert_row(t, c, connection_key,
                           [](const Connection& c) { return FieldValues{opt(c.state), opt_time(c.created)}; }, s.label);
            break;
        case EntityClass::users:
            for (const auto& u : s.users)
                insert_row(t, u, user_key,
                           [](const UserRecord& u) { return FieldValues{u.lmhash, u.nthash, u.user}; }, s.label);
            break;
        case EntityClass::modules:
            for (const auto& m : s.modules)
                insert_row(t, m, module_key,
                           [](const ModuleRecord& m) { return FieldValues{m.in_load, m.in_init, m.in_mem}; }, s.label);
            break;
        case EntityClass::registry:
            for (const auto& e : s.registry)
                insert_row(t, e, registry_key,
                           [](const RegistryEntry& e) { return FieldValues{e.value_data, opt_time(e.last_write)}; },
                           s.label);
            break;
    }
    return t;
}

ClassDelta diff_class(EntityClass cls, const Table& before, const Table& after) {
    const auto& names = mutable_fields(cls);
    ClassDelta d;
    auto b = before.begin();
    auto a = after.begin();
    while (b != before.end() || a != after.end()) {
        if (a == after.end() || (b != before.end() && b->first < a->first)) {
            d.removed.push_back({cls, b->first});
            ++b;
        } else if (b == before.end() || a->first < b->first) {
            d.added.push_back({cls, a->first});
            ++a;
        } else {
            std::vector<FieldChange> changes;
            for (std::size_t i = 0; i < names.size(); ++i)
                if (b->second[i] != a->second[i]) changes.push_back({names[i], b->second[i], a->second[i]});
            if (changes.empty())
                d.consistent.push_back({cls, a->first});
            else
                d.updated.push_back({{cls, a->first}, std::move(changes)});
            ++a;
            ++b;
        }
    }
    return d;
}

json keys_json(const std::vector<EntityKey>& keys) {
    json out = json::array();
    for (const auto& k : keys) out.push_back(json::parse(k.key));
    return out;
}

}  // namespace

const std::vector<std::string>& mutable_fields(EntityClass cls) {
    static const std::vector<std::string> processes{"threads", "handles", "exit_time", "session_id"};
    static const std::vector<std::string> connections{"state", "created"};
    static const std::vector<std::string> users{"lmhash", "nthash", "user"};
    static const std::vector<std::string> modules{"in_load", "in_init", "in_mem"};
    static const std::vector<std::string> registry{"value_data", "last_write"};
    switch (cls) {
        case EntityClass::processes: return processes;
        case EntityClass::connections: return connections;
        case EntityClass::users: return users;
        case EntityClass::modules: return modules;
        case EntityClass::registry: return registry;
    }
    return processes;
}

DeltaReport diff_snapshots(const Snapshot& before, const Snapshot& after) {
    if (before.label == after.label)
        throw Error(ErrorKind::LabelCollision, "both snapshots are labelled \"" + before.label + "\"");
    DeltaReport r;
    r.before_label = before.label;
    r.after_label = after.label;
    for (auto cls : kAllEntityClasses) r[cls] = diff_class(cls, table_for(before, cls), table_for(after, cls));
    return r;
}

DeltaSummary summarize_delta(const DeltaReport& report) {
    DeltaSummary out{};
    for (auto cls : kAllEntityClasses) {
        const auto& d = report[cls];
        out[static_cast<std::size_t>(cls)] = {d.added.size(), d.removed.size(), d.updated.size(), d.consistent.size()};
    }
    return out;
}

std::vector<Finding> delta_findings(const DeltaReport& report, const Snapshot& after, const RuleConfig& cfg) {
    std::unordered_set<std::string> malicious;
    for (const auto& ip : cfg.malicious_ips) malicious.insert(canonical_ip(ip));
    std::unordered_map<std::string, const Connection*> by_key;
    for (const auto& c : after.connections) by_key.emplace(connection_key(c).key, &c);
    std::unordered_map<std::int64_t, const ProcessNode*> by_pid;
    for (const auto& fp : flatten(after.processes)) by_pid.emplace(fp.node->pid, fp.node);

    const std::string window = "between " + report.before_label + " and " + report.after_label;
    std::vector<Finding> out;
    std::map<std::string, std::size_t> no_args_by_process;

    auto consider = [&](const EntityKey& key, const std::string& how) {
        auto it = by_key.find(key.key);
        if (it == by_key.end()) return;
        const Connection& c = *it->second;
        const ProcessNode* owner = nullptr;
        if (c.pid)
            if (auto p = by_pid.find(*c.pid); p != by_pid.end()) owner = p->second;
        std::string conn_text = std::string(to_string(c.proto)) + " " + c.local_addr + ":" +
                                std::to_string(c.local_port) + " -> " + c.foreign_addr + ":" +
                                std::to_string(c.foreign_port);
        if (malicious.contains(canonical_ip(c.foreign_addr))) {
            std::vector<std::string> evidence{"foreign address " + c.foreign_addr + " is on the malicious list",
                                              "connection " + conn_text + " " + how + " " + window};
            if (owner)
                evidence.push_back("owned by " + owner->image_file_name + " (PID " + std::to_string(owner->pid) + ")");
            out.push_back({RuleId::malicious_ip, Severity::high, key, std::move(evidence), after.label});
        }
        if (owner && is_rundll32(*owner) && lacks_arguments(*owner)) {
            auto pkey = process_key(*owner);
            std::string line = "owns connection " + conn_text + " that " + how + " " + window;
            auto [slot, fresh] = no_args_by_process.emplace(pkey.key, out.size());
            if (fresh) {
                out.push_back({RuleId::rundll32_no_args,
                               Severity::high,
                               pkey,
                               {owner->image_file_name + " (PID " + std::to_string(owner->pid) +
                                    ") runs without command-line arguments",
                                line},
                               after.label});
            } else {
                out[slot->second].evidence.push_back(line);
            }
        }
    };

    const auto& conns = report[EntityClass::connections];
    for (const auto& k : conns.added) consider(k, "appeared");
    for (const auto& u : conns.updated) consider(u.key, "changed");
    sort_findings(out);
    return out;
}

json to_json(const DeltaCounts& c) {
    return json{{"added", c.added}, {"removed", c.removed}, {"updated", c.updated}, {"consistent", c.consistent}};
}

json to_json(const DeltaSummary& summary) {
    json out = json::object();
    for (auto cls : kAllEntityClasses) out[std::string(to_string(cls))] = to_json(summary[static_cast<std::size_t>(cls)]);
    return out;
}

json to_json(const DeltaReport& report) {
    json classes = json::object();
    for (auto cls : kAllEntityClasses) {
        const auto& d = report[cls];
        json updated = json::array();
        for (const auto& u : d.updated) {
            json changes = json::array();
            for (const auto& ch : u.changes)
                changes.push_back({{"field", ch.field}, {"before", ch.before}, {"after", ch.after}});
            updated.push_back({{"key", json::parse(u.key.key)}, {"changes", std::move(changes)}});
        }
        classes[std::string(to_string(cls))] = {
            {"added", keys_json(d.added)},
            {"removed", keys_json(d.removed)},
            {"updated", std::move(updated)},
            {"consistent", keys_json(d.consistent)},
        };
    }
    return json{
        {"before_label", report.before_label},
        {"after_label", report.after_label},
        {"classes", std::move(classes)},
        {"summary", to_json(summarize_delta(report))},
    };
}

}  // namespace spectre
