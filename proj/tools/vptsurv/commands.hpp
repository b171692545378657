#pragma once

// Command implementations behind the `vptsurv` executable. Each command
// throws on failure; `run_guarded` maps exceptions to the process exit
// codes so that main() and the tests share one policy.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vptsurv/config.hpp"
#include "vptsurv/trainer.hpp"

namespace vptsurv::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// Environment variable that re-roots every relative output path.
inline constexpr const char* kOutputRootEnv = "VPTSURV_OUTPUT_ROOT";

/// Runs `body`, printing any error to `err`. InvalidArgument (bad flags,
/// bad config values) -> 2; everything else (missing files, corrupt
/// archives, diverged training) -> 3.
int run_guarded(const std::function<void()>& body, std::ostream& err);

/// `path` under $VPTSURV_OUTPUT_ROOT when that is set and `path` is relative.
fs::path resolve_output(const fs::path& path);

/// The preset's config, or the file's when `config_path` is non-empty.
ExperimentConfig load_experiment(const fs::path& config_path, const std::string& preset = "desk");

/// Refuses (InvalidArgument) when `dir` exists and is non-empty unless
/// `force`; with `force` the directory is cleared first.
void prepare_output_dir(const fs::path& dir, bool force);

struct SynthOptions {
  fs::path config;
  std::optional<std::uint64_t> seed;
  fs::path out;  // empty: config data_dir
  bool force = false;
};

struct SynthOutcome {
  fs::path dir;
  CohortSummary summary;
  double oracle_ci = 0.0;
};

SynthOutcome cmd_synth(const SynthOptions& options, std::ostream& out);

struct TrainOptions {
  fs::path config;
  std::optional<std::string> mode;     // end_to_end | two_stage
  std::optional<std::string> prompts;  // "structure,scale", "" = self-prompt
  fs::path data;                       // empty: config data_dir
  fs::path out;                        // empty: <output_dir>/<mode>[-<prompts>]
  bool force = false;
};

struct TrainOutcome {
  fs::path dir;  // holds checkpoint.bin, report.json, config.ini
  RunReport report;
};

TrainOutcome cmd_train(const TrainOptions& options, std::ostream& out);

/// Same, with the cohort already in memory (ablation runs share it).
TrainOutcome train_on_cohort(const ExperimentConfig& config, const Cohort& cohort, const fs::path& dir,
                             bool force, std::ostream& out);

struct EvalOptions {
  fs::path checkpoint;
  fs::path data;  // cohort directory
  std::string split = "test";
  int tiles = 1000;
  std::uint64_t seed = TrainConfig{}.eval_seed;
  fs::path out;  // empty: directory of the checkpoint
  bool force = false;
};

struct EvalOutcome {
  fs::path metrics;  // eval-<split>.json
  fs::path risks;    // eval-<split>-risks.csv
  fs::path km_low;   // eval-<split>-km_low.csv
  fs::path km_high;  // eval-<split>-km_high.csv
  Evaluation evaluation;
};

EvalOutcome cmd_eval(const EvalOptions& options, std::ostream& out);

struct Comparison {
  std::string label_a, label_b;
  double ci_a = 0.0, ci_b = 0.0;
  double delta = 0.0;     // a - b
  double relative = 0.0;  // (a - b) / b
};

Comparison compare_reports(const RunReport& a, const RunReport& b);
Comparison cmd_compare(const fs::path& report_a, const fs::path& report_b, std::ostream& out);

struct GradCheckOptions {
  fs::path config;
  int coordinates = 256;
  int slides = 2;
  int tiles = 4;
  double tolerance = 1e-4;
};

/// Gradient check on a few training slides of the config's synthetic
/// cohort (generated in memory) with randomised adaptor up-projections.
GradientCheckResult cmd_grad_check(const GradCheckOptions& options, std::ostream& out);

ParameterAudit cmd_audit(const fs::path& config_path, const std::string& preset, std::ostream& out);

struct AblateOptions {
  fs::path config;
  fs::path data;
  fs::path out;  // empty: <output_dir>/ablation
  bool force = false;
};

struct AblationRow {
  std::string name;  // "VPT", "VPT + structure", "VPT + structure + scale"
  std::vector<PromptKind> sources;
  RunReport report;
};

/// End-to-end runs with no, structure, and structure + scale prompt
/// sources; writes one run directory per row plus ablation.json.
std::vector<AblationRow> cmd_ablate(const AblateOptions& options, std::ostream& out);

/// Fixed-width table: configuration, sources, selected epoch, test CI, delta vs first row.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace vptsurv::cli
