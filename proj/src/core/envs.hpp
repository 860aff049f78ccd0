#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace pprl {

enum class Task { kPointReach, kColorTouch };

Task task_from_name(const std::string& name);
std::string task_name(Task task);

struct EnvConfig {
  Task task = Task::kPointReach;
  bool zero_colors = false;      // strip color information from observations
  std::size_t max_obs_points = 200;
  NormalizationSpec normalization;  // applied to every observation
  double action_scale = 0.05;
  double success_radius = 0.1;
  std::size_t horizon = 50;
  double min_separation = 0.4;
  double spawn_half_extent = 0.7;
  double cluster_radius = 0.06;
  std::size_t cluster_points = 40;
  std::size_t floor_points = 120;
  double view_max_angle_deg = 15.0;
  double view_max_shift = 0.02;
};

struct EnvState {
  Vec3 agent{0, 0, 0};
  Vec3 target{0, 0, 0};
  Vec3 distractor{0, 0, 0};  // ColorTouch only
  std::size_t step_count = 0;
  Rng episode_rng;
  double view_angle = 0.0;  // rotation about the vertical axis
  Vec3 view_shift{0, 0, 0};
  bool finished = false;
};

struct ResetResult {
  PointCloud obs;
  std::vector<double> state;  // proprioception: agent position
};

struct StepResult {
  PointCloud obs;
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;       // genuine termination
  bool truncated = false;  // horizon reached; bootstrap through it
  bool success = false;
};

// Deterministic synthetic point-cloud control: move a 3D agent towards a
// target cluster under a per-episode viewpoint transform. ColorTouch adds a
// color-coded decoy; the red/blue assignment is a fair coin per episode.
class Env {
 public:
  explicit Env(EnvConfig config);

  ResetResult reset(std::uint64_t seed);
  StepResult step(const std::vector<double>& action);

  // Observation at the current state without advancing the RNG stream.
  PointCloud render() const;

  const EnvConfig& config() const { return config_; }
  const EnvState& state() const { return state_; }
  void set_state(const EnvState& s) { state_ = s; }
  bool uses_color() const { return config_.task == Task::kColorTouch; }
  static constexpr int kActionDim = 3;

 private:
  PointCloud render_with(Rng& rng) const;
  std::vector<double> proprioception() const;

  EnvConfig config_;
  EnvState state_;
};

}  // namespace pprl
