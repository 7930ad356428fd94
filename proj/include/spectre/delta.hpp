// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "spectre/anomaly.hpp"
#include "spectre/model.hpp"

namespace spectre {

struct FieldChange {
    std::string field;
    json before;
    json after;

    bool operator==(const FieldChange&) const = default;
};

struct UpdatedEntity {
    EntityKey key;
    std::vector<FieldChange> changes;  // non-empty, in field-list order

    bool operator==(const UpdatedEntity&) const = default;
};

/// The four categories for one entity class, each sorted by key.
struct ClassDelta {
    std::vector<EntityKey> added;
    std::vector<EntityKey> removed;
    std::vector<UpdatedEntity> updated;
    std::vector<EntityKey> consistent;

    bool operator==(const ClassDelta&) const = default;
};

struct DeltaReport {
    std::string before_label;
    std::string after_label;
    std::array<ClassDelta, std::size(kAllEntityClasses)> classes;

    ClassDelta& operator[](EntityClass cls) { return classes[static_cast<std::size_t>(cls)]; }
    const ClassDelta& operator[](EntityClass cls) const { return classes[static_cast<std::size_t>(cls)]; }

    bool operator==(const DeltaReport&) const = default;
};

struct DeltaCounts {
    std::size_t added = 0;
    std::size_t removed = 0;
    std::size_t updated = 0;
    std::size_t consistent = 0;

    std::size_t total() const { return added + removed + updated + consistent; }
    bool operator==(const DeltaCounts&) const = default;
};

using DeltaSummary = std::array<DeltaCounts, std::size(kAllEntityClasses)>;

/// Names of the fields compared for `cls`; everything else is identity or
/// ignored. Processes: threads, handles, exit_time, session_id. Connections:
/// state, created. Users: lmhash, nthash, user. Modules: in_load, in_init,
/// in_mem. Registry: value_data, last_write.
const std::vector<std::string>& mutable_fields(EntityClass cls);

/// Keyed comparison of two snapshots. LabelCollision when the labels match;
/// SchemaError when either side holds a duplicate key.
DeltaReport diff_snapshots(const Snapshot& before, const Snapshot& after);

DeltaSummary summarize_delta(const DeltaReport& report);

/// MALICIOUS_IP for added or updated connections to a listed address and
/// RUNDLL32_NO_ARGS for an argument-less rundll32 owning such a connection.
/// `after` must be the snapshot the report's after side was computed from.
std::vector<Finding> delta_findings(const DeltaReport& report, const Snapshot& after, const RuleConfig& cfg);

json to_json(const DeltaReport& report);
json to_json(const DeltaSummary& summary);
json to_json(const DeltaCounts& counts);

}  // namespace spectre
