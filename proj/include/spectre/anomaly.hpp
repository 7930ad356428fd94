// SPDX-License-Identifier: Apache-2.0
//
// Rule engine over a Snapshot. Each detector is a pure function of
// (snapshot, config) and fires at most once per subject.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spectre/model.hpp"

namespace spectre {

enum class RuleId {
    rundll32_bad_parent,
    rundll32_no_args,
    cred_dump,
    unsafe_extension,
    malicious_ip,
    port_zero,
    unlinked_module,
    cmdline_ip,
};

inline constexpr RuleId kAllRules[] = {RuleId::rundll32_bad_parent, RuleId::rundll32_no_args, RuleId::cred_dump,
                                       RuleId::unsafe_extension,    RuleId::malicious_ip,     RuleId::port_zero,
                                       RuleId::unlinked_module,     RuleId::cmdline_ip};

/// "RUNDLL32_BAD_PARENT", "CRED_DUMP", ...
std::string_view to_string(RuleId rule) noexcept;
std::optional<RuleId> parse_rule_id(std::string_view text) noexcept;

enum class Severity { low, medium, high };
std::string_view to_string(Severity severity) noexcept;
std::optional<Severity> parse_severity(std::string_view text) noexcept;

struct Finding {
    RuleId rule_id = RuleId::rundll32_bad_parent;
    Severity severity = Severity::low;
    EntityKey subject;
    std::vector<std::string> evidence;
    std::string snapshot_label;

    bool operator==(const Finding&) const = default;
};

json to_json(const Finding& finding);
Finding finding_from_json(const json& j);

struct RuleConfig {
    std::vector<std::string> rundll32_parent_allowlist;
    std::vector<std::string> executable_extensions;
    std::vector<std::string> unsafe_extensions;
    std::vector<std::string> malicious_ips;
    std::vector<std::string> benign_ips;
    bool cmdline_ipv6 = false;

    /// Shipped defaults: allowlist {explorer.exe, svchost.exe, services.exe,
    /// cmd.exe, powershell.exe, msiexec.exe, control.exe}; executables {.exe};
    /// unsafe {.img, .txt, .log, .png, .jpg, .jpeg, .dll, .scr}; no IPs.
    static RuleConfig defaults();
};

/// Canonical JSON (sorted keys) used for the report's config digest.
json to_json(const RuleConfig& cfg);

/// Reads a JSON config. Every key is optional and falls back to defaults().
/// "malicious_ips_file" / "benign_ips_file" name newline-delimited lists,
/// resolved relative to the config file; entries are appended to any inline
/// "malicious_ips" / "benign_ips". Allowlist and extensions are lowercased and
/// extensions must start with '.' (InvalidConfig otherwise).
RuleConfig load_rule_config(const std::filesystem::path& path);
RuleConfig rule_config_from_json(const json& j, const std::filesystem::path& base_dir = {});

/// One address per line; blank lines and '#' comments are skipped.
std::vector<std::string> load_ip_list(const std::filesystem::path& path);

// -- command-line helpers (exposed for tests) -------------------------------

/// Whitespace split honouring double quotes; quotes are stripped.
std::vector<std::string> tokenize_cmdline(std::string_view cmd);

/// Lowercased extension of the last path component including the dot
/// (".exe"), or "" when there is none.
std::string file_extension(std::string_view path);

struct IpLiteral {
    std::string address;
    std::string token;  // whitespace-delimited token that contains it
};

/// Dotted-quad IPv4 literals (octets 0-255, not part of a longer dotted run);
/// with `include_v6`, IPv6 literals too.
std::vector<IpLiteral> extract_ip_literals(std::string_view text, bool include_v6 = false);

// -- detectors --------------------------------------------------------------

std::vector<Finding> detect_rundll32_bad_parent(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_rundll32_no_args(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_credential_dump(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_unsafe_extension(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_malicious_ip(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_port_zero(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_unlinked_module(const Snapshot& snapshot, const RuleConfig& cfg);
std::vector<Finding> detect_cmdline_ip(const Snapshot& snapshot, const RuleConfig& cfg);

/// All eight rules, ordered by (rule_id, subject).
std::vector<Finding> run_all(const Snapshot& snapshot, const RuleConfig& cfg);

/// Orders findings by (rule_id, subject); stable.
void sort_findings(std::vector<Finding>& findings);

/// True when the rundll32 process runs without arguments (no Cmd, or a Cmd
/// that holds only the executable token).
bool lacks_arguments(const ProcessNode& node);
bool is_rundll32(const ProcessNode& node);

}  // namespace spectre
