#pragma once

#include "mirrorbridge/problems.hpp"
#include "mirrorbridge/vomd.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mirrorbridge {

// Resolved experiment configuration. Defaults follow the 2-d setup: K = 8,
// epsilon = 0.1, 400 outer steps, 20,000 total inner steps (N = 50), harmonic
// step sizes on [1.0, 0.05].
struct ExperimentConfig {
  // problem
  ProblemSpec problem;

  // model
  int components = 8;
  double init_chol_scale = 1.0;

  // schedule
  OmdSchedule schedule;

  // trainer
  int total_inner_steps = 20000;
  double inner_step_size = 0.02;
  int batch_size = 128;
  int n_y = 16;
  bool zero_centered = true;
  std::string target = "reverse_kl";     // reverse_kl | reverse_kl_ema | oracle
  std::string target_refit = "continue"; // continue | fresh
  int refit_iterations = 50;
  int refit_batch = 256;
  double learning_rate = 0.05;
  double momentum = 0.0;
  double ema_decay = 0.99;
  double fit_floor = 0.05;
  bool trust_region = true;

  // eval
  int eval_every = 10;
  int kl_samples = 4000;
  int ed_samples = 2000;
  int holdout = 4000;
  std::string checkpoint_path;      // sample/eval input
  std::string sampler = "sde";      // sde | bridge
  int trajectories = 64;
  int sde_steps = 200;
  std::vector<double> x0;
  int grid_points = 400;            // sinkhorn mode
  double grid_radius = 5.0;
  int sinkhorn_max_iters = 10000;
  double sinkhorn_tol = 1e-10;
  std::vector<std::pair<std::string, std::string>> eval_checkpoints;  // (method, path)

  // output
  bool write_checkpoint = true;
  bool write_csv = true;

  int inner_steps_per_omd() const {
    return std::max(1, total_inner_steps / std::max(1, schedule.total_steps));
  }
};

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  bool dry_run = false;
  bool plots = false;
  bool force = false;
};

// Parses and validates a config document. Unknown keys are errors; every
// violated field is collected before throwing.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Canonical JSON rendering of the resolved config (sorted keys), used for
// dry-run output and the output-directory hash.
std::string resolved_config_json(const ExperimentConfig& config);

// Output directory for a run: out_dir/<mode>-<name>-<confighash8>-s<seed>.
std::string run_directory(const std::string& out_dir, const std::string& mode,
                          const ExperimentConfig& config);

// Drivers behind the CLI subcommands. Each returns a process exit code and, on
// failure, writes a single-line JSON error record to `err`.
int run_fit(const ExperimentConfig& config, const RunOverrides& overrides, std::ostream& err);
int run_train(const ExperimentConfig& config, const RunOverrides& overrides, std::ostream& err);
int run_stream(const ExperimentConfig& config, const RunOverrides& overrides, std::ostream& err);
int run_sample(const ExperimentConfig& config, const RunOverrides& overrides, std::ostream& err);
int run_eval(const ExperimentConfig& config, const RunOverrides& overrides, std::ostream& err);
int run_sinkhorn(const ExperimentConfig& config, const RunOverrides& overrides,
                 std::ostream& err);

// Dispatch by mode name; loads the config file and applies overrides.
int run_experiment(const std::string& mode, const std::string& config_path,
                   const RunOverrides& overrides, std::ostream& out, std::ostream& err);

}  // namespace mirrorbridge
