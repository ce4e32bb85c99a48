#include "mirrorbridge/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <thread>
#include <vector>

namespace {

struct SharedFlags {
  std::string config;
  std::string out = "runs";
  std::vector<std::uint64_t> seeds;
  bool dry_run = false;
  bool plots = false;
  bool force = false;
};

void add_shared(CLI::App* cmd, SharedFlags& flags) {
  cmd->add_option("--config", flags.config, "Path to the JSON config")->required();
  cmd->add_option("--seed", flags.seeds, "Seed(s); several seeds run as parallel cells");
  cmd->add_option("--out", flags.out, "Output root directory");
  cmd->add_flag("--dry-run", flags.dry_run, "Validate and print the resolved config");
  cmd->add_flag("--plots", flags.plots, "Write SVG plots");
  cmd->add_flag("--force", flags.force, "Allow overwriting an existing run directory");
}

int dispatch(const std::string& mode, const SharedFlags& flags) {
  mirrorbridge::RunOverrides base;
  base.out_dir = flags.out;
  base.dry_run = flags.dry_run;
  base.plots = flags.plots;
  base.force = flags.force;

  std::vector<std::uint64_t> seeds = flags.seeds;
  if (seeds.empty()) {
    mirrorbridge::RunOverrides overrides = base;
    return mirrorbridge::run_experiment(mode, flags.config, overrides, std::cout, std::cerr);
  }
  if (seeds.size() == 1) {
    mirrorbridge::RunOverrides overrides = base;
    overrides.seed = seeds[0];
    return mirrorbridge::run_experiment(mode, flags.config, overrides, std::cout, std::cerr);
  }

  // Independent seed cells on a small worker pool; each cell owns its run dir.
  const int workers =
      std::min<int>(mirrorbridge::worker_slots(), static_cast<int>(seeds.size()));
  std::vector<int> codes(seeds.size(), 0);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < seeds.size(); i += workers) {
        mirrorbridge::RunOverrides overrides = base;
        overrides.seed = seeds[i];
        codes[i] =
            mirrorbridge::run_experiment(mode, flags.config, overrides, std::cout, std::cerr);
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const int code : codes) {
    if (code != 0) return code;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schrodinger-bridge solver and experiment harness"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> modes = {
      {"fit", "Fit the reverse-KL baseline on a problem"},
      {"train", "Run mirrored training against a fitted target"},
      {"stream", "Online rotating-filter experiment"},
      {"sample", "Sample trajectories from a checkpoint"},
      {"eval", "Evaluate checkpoints on a problem"},
      {"sinkhorn", "Discrete grid oracle for one-dimensional problems"},
  };
  std::vector<SharedFlags> flags(modes.size());
  std::vector<CLI::App*> commands;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    CLI::App* cmd = app.add_subcommand(modes[i].first, modes[i].second);
    add_shared(cmd, flags[i]);
    commands.push_back(cmd);
  }

  CLI11_PARSE(app, argc, argv);
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (commands[i]->parsed()) return dispatch(modes[i].first, flags[i]);
  }
  return 1;
}
