// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <exception>
#include <string>
#include <vector>

#include "dynmoe/cli/run_config.hpp"

namespace dynmoe::cli {

/// Exit statuses of the `dynmoe` executable.
enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kMissingArtifact = 3, kNumeric = 4 };

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"gen-data", "train-teacher", "inject",  "adapt",
                                                 "evaluate", "flops",         "analyze", "plots"};
  return names;
}

struct CommandOptions {
  bool breakdown = false;  // flops: also write the per-term table
};

/// Artifact locations relative to the output directory.
namespace paths {
inline constexpr const char* kTrain = "data/train.csv";
inline constexpr const char* kHeldout = "data/heldout.csv";
inline constexpr const char* kTeacher = "teacher.ckpt";
inline constexpr const char* kTeacherLog = "teacher_log.csv";
inline constexpr const char* kInjected = "injected.ckpt";
inline constexpr const char* kInjectionReport = "injection_report.csv";
inline constexpr const char* kStudent = "student.ckpt";
inline constexpr const char* kTrainLog = "train_log.csv";
inline constexpr const char* kSpeedup = "flops_speedup.csv";
inline constexpr const char* kBreakdown = "flops_breakdown.csv";
inline constexpr const char* kAnalysis = "analysis";
inline constexpr const char* kPlots = "plots";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace paths

/// Runs one subcommand and records it in the manifest. Returns the written
/// artifact paths relative to `cfg.out_dir`. Errors propagate as exceptions.
///
/// manifest.json holds `commands.<name>` (latest run: config_hash, seed,
/// artifact digests) and `artifacts.<path>` (the run that last wrote it).
/// The resolved config of each run is saved as config_<hash>.json.
std::vector<std::string> run_command(const std::string& name, const RunConfig& cfg, const CommandOptions& opts = {});

/// Maps an exception to its exit status.
int exit_code_for(const std::exception& e);

/// Full command-line entry point (argv[0] is the program name).
int cli_main(int argc, const char* const* argv);

}  // namespace dynmoe::cli
