#pragma once

#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "metrics.hpp"

namespace pprl {

// PPRL_THREADS caps worker threads (defaults to the hardware count).
unsigned worker_thread_cap();

struct TrainReport {
  std::uint64_t steps_run = 0;
  std::uint64_t episodes = 0;
  double final_eval_success = -1.0;
  double best_eval_success = 0.0;
  std::uint64_t steps_to_stop = 0;  // 0 = stop threshold never reached
  bool stopped_early = false;
  double wallclock_seconds = 0.0;
  std::string out_dir;
};

// Collect -> update (per replay ratio) -> periodic eval + checkpoint.
// Writes metrics.csv, eval.csv, run_manifest.json, summary.json and
// checkpoint files under config.out_dir. When resuming, the architecture,
// environment and RNG state come from the checkpoint; out_dir, total_steps,
// eval cadence and the stop threshold come from the given config.
TrainReport train_run(const RunConfig& config, const std::string* resume_path);

struct EvalReport {
  std::size_t episodes = 0;
  double mean_success = 0.0;
  double success_lo = 0.0, success_hi = 0.0;
  double mean_return = 0.0;
  double return_lo = 0.0, return_hi = 0.0;
};

// Deterministic-mode policy over fresh episodes, with a seeded percentile
// bootstrap (10000 resamples) for the confidence intervals. dump_dir, when
// given, receives each observation as a point-cloud file.
EvalReport evaluate_agent(Agent& agent, const EnvConfig& env_config,
                          std::size_t episodes, std::uint64_t seed,
                          const std::string* dump_dir);

struct ReconstructReport {
  std::size_t patches = 0;
  double mean_chamfer = 0.0;
  double mean_color_loss = 0.0;  // -1 when colors are disabled
  std::vector<double> per_patch_chamfer;
  std::string predicted_path;
  std::string ground_truth_path;
};

// Tokenize -> mask -> reconstruct a cloud file; writes predicted and
// ground-truth patches (absolute coordinates) as point-cloud files.
ReconstructReport reconstruct_run(Agent& agent, const PointCloud& cloud,
                                  const std::string& out_dir);

// median-of-7 wall times, CSV text: kernel,size,median_us
std::string bench_run(const std::string& kernel,
                      const std::vector<std::size_t>& sizes);

}  // namespace pprl
