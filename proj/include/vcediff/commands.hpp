#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

namespace vcediff {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "VCEDIFF_OUTPUT_DIR";

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitValidation = 2,
  kExitNumeric = 3,
};

struct CommandContext {
  std::optional<std::uint64_t> seed;  // overrides the config / spec seed
  std::filesystem::path out;          // empty: see default_output
  bool quiet = false;
  std::ostream* log = nullptr;        // progress and summaries; null is silent
};

/// `out` if set, else $VCEDIFF_OUTPUT_DIR / name, else `fallback`.
std::filesystem::path default_output(const CommandContext& ctx, const std::string& name,
                                     const std::filesystem::path& fallback);

/// Runs one command and maps exceptions to exit codes: configuration,
/// format, shape, domain and usage errors give 2, NumericError gives 3.
/// The message goes to `err`.
int run_command(const std::function<void()>& body, std::ostream& err);

/// Writes the dataset directory for a synth spec (JSON; every key optional)
/// plus ground-truth events for each split as <split>_events.jsonl.
/// Output defaults to "synth".
std::filesystem::path cmd_synth(const std::filesystem::path& spec_path, const CommandContext& ctx);

/// Trains from a config file (JSON, see RunConfig). The file text is echoed
/// at the top of run.log. Output defaults to the config's output_dir.
std::filesystem::path cmd_train(const std::filesystem::path& config_path, const CommandContext& ctx);

/// Frame scores of one split of a dataset directory with the EMA weights of
/// a checkpoint. Output defaults to scores.csv.
std::filesystem::path cmd_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                                  const std::string& split, const CommandContext& ctx);

/// Per-class F1-optimal thresholds from scores and a labelled manifest.
/// Output defaults to thresholds.txt.
std::filesystem::path cmd_thresholds(const std::filesystem::path& scores, const std::filesystem::path& labels,
                                     const CommandContext& ctx);

/// Events JSON Lines from scores and thresholds. Temporal settings come from
/// `config` when given. Output defaults to events.jsonl.
std::filesystem::path cmd_events(const std::filesystem::path& scores, const std::filesystem::path& thresholds,
                                 const std::filesystem::path& config, const CommandContext& ctx);

/// report.txt, frame_metrics.csv and temporal_metrics.csv in the output
/// directory (default "report"). Frame metrics use `thresholds` when given,
/// 0.5 otherwise.
std::filesystem::path cmd_eval(const std::filesystem::path& predictions, const std::filesystem::path& ground_truth,
                               const std::filesystem::path& scores, const std::filesystem::path& labels,
                               const std::filesystem::path& thresholds, const CommandContext& ctx);

/// Finite-difference check of every trainable parameter of the model in
/// `config` (defaults when empty). Prints the maximum relative error and
/// throws NumericError when it reaches `tolerance`.
double cmd_gradcheck(const std::filesystem::path& config, double tolerance, const CommandContext& ctx);

}  // namespace vcediff
