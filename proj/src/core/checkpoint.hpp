#pragma once

#include <memory>
#include <string>

#include "config.hpp"
#include "envs.hpp"
#include "sac.hpp"

namespace pprl {

// Training-loop state carried across checkpoint/resume so a resumed run
// replays the uninterrupted one exactly.
struct TrainerState {
  std::uint64_t global_step = 0;
  std::uint64_t episode_index = 0;
  double episode_return = 0.0;
  std::uint64_t episode_steps = 0;
  double update_credit = 0.0;
  double critic_loss_sum = 0.0;
  double actor_loss_sum = 0.0;
  double aux_loss_sum = 0.0;
  double alpha_last = 0.0;
  double q_mean_sum = 0.0;
  std::uint64_t loss_count = 0;
  double best_eval_success = 0.0;
  std::uint64_t steps_to_stop = 0;  // first step where the stop threshold held
  EnvState env_state;
  PointCloud current_obs;
  std::vector<double> current_state;
};

// Single binary blob, versioned header, little-endian scalars. The agent
// section always round-trips bit-exactly; training checkpoints additionally
// carry the loop state, environment state and replay buffer.
void save_checkpoint(const std::string& path, const RunConfig& config,
                     const Agent& agent, const TrainerState* trainer,
                     const ReplayBuffer* buffer);

struct LoadedCheckpoint {
  RunConfig config;
  Agent agent;
  bool has_trainer = false;
  TrainerState trainer;
  std::unique_ptr<ReplayBuffer> buffer;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Rebuilds an agent skeleton matching a config (parameters are then
// overwritten by the checkpoint loader).
Agent agent_from_config(const RunConfig& config);

}  // namespace pprl
