// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace spectre {

/// Exit codes shared by every subcommand.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int findings = 1;  // only with --fail-on-findings
inline constexpr int error = 2;
inline constexpr int fixture_missing = 3;
inline constexpr int usage = 64;
}  // namespace exit_code

/// Runs the command line `args` (args[0] is the program name). Data goes to
/// `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

enum class BenchStage { emulate, analyze, anomaly, delta, timeline, render };
std::string_view to_string(BenchStage stage) noexcept;

struct BenchResult {
    std::size_t n = 0;
    std::size_t repeat = 0;
    BenchStage stage = BenchStage::analyze;
    double wall_time = 0;            // seconds
    std::uint64_t peak_memory = 0;   // process resident high-water mark, bytes
    std::size_t rows_processed = 0;
};

/// emulate -> load -> run_all -> diff -> timeline -> render for one scale,
/// using `work_dir` for the corpora.
std::vector<BenchResult> run_bench_scale(std::size_t n, std::size_t repeat, std::uint64_t seed,
                                         const std::string& work_dir);

std::string bench_csv(const std::vector<BenchResult>& rows);

}  // namespace spectre
