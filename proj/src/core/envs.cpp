#include "envs.hpp"

#include <cmath>

namespace pprl {

Task task_from_name(const std::string& name) {
  if (name == "point_reach") return Task::kPointReach;
  if (name == "color_touch") return Task::kColorTouch;
  throw_config_error("unknown environment: " + name);
}

std::string task_name(Task task) {
  return task == Task::kPointReach ? "point_reach" : "color_touch";
}

Env::Env(EnvConfig config) : config_(std::move(config)) {
  require(config_.horizon >= 1, ErrorCode::config, "horizon must be >= 1");
  require(config_.max_obs_points >= 1, ErrorCode::config,
          "max_obs_points must be >= 1");
}

namespace {

Vec3 sample_box(Rng& rng, double half) {
  return {rng.uniform(-half, half), rng.uniform(-half, half),
          rng.uniform(-half, half)};
}

double dist(const Vec3& a, const Vec3& b) { return std::sqrt(squared_dist(a, b)); }

void append_sphere_cluster(PointCloud& cloud, const Vec3& center, double radius,
                           std::size_t count, const Vec3* color, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 dir{rng.normal01(), rng.normal01(), rng.normal01()};
    double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (norm == 0.0) {
      dir = {1.0, 0.0, 0.0};
      norm = 1.0;
    }
    cloud.positions.push_back({center[0] + radius * dir[0] / norm,
                               center[1] + radius * dir[1] / norm,
                               center[2] + radius * dir[2] / norm});
    if (color) cloud.colors->push_back(*color);
  }
}

}  // namespace

ResetResult Env::reset(std::uint64_t seed) {
  state_ = EnvState{};
  state_.episode_rng = Rng(seed);
  Rng& rng = state_.episode_rng;

  const double half = config_.spawn_half_extent;
  state_.agent = sample_box(rng, half);
  do {
    state_.target = sample_box(rng, half);
  } while (dist(state_.agent, state_.target) < config_.min_separation);

  if (config_.task == Task::kColorTouch) {
    do {
      state_.distractor = sample_box(rng, half);
    } while (dist(state_.agent, state_.distractor) < config_.min_separation ||
             dist(state_.target, state_.distractor) < config_.min_separation);
    // fair coin: which of the two sampled sites carries the red target
    if (rng.uniform01() < 0.5) std::swap(state_.target, state_.distractor);
  }

  const double max_angle = config_.view_max_angle_deg * M_PI / 180.0;
  state_.view_angle = rng.uniform(-max_angle, max_angle);
  for (int a = 0; a < 3; ++a) {
    state_.view_shift[a] = rng.uniform(-config_.view_max_shift, config_.view_max_shift);
  }

  ResetResult out;
  out.obs = render_with(rng);
  out.state = proprioception();
  return out;
}

StepResult Env::step(const std::vector<double>& action) {
  require(!state_.finished, ErrorCode::invalid_state,
          "Env::step: episode already terminated");
  require(action.size() == kActionDim, ErrorCode::invalid_argument,
          "Env::step: action must have 3 components");

  for (int a = 0; a < 3; ++a) {
    const double clipped = std::min(std::max(action[a], -1.0), 1.0);
    state_.agent[a] += config_.action_scale * clipped;
    state_.agent[a] = std::min(std::max(state_.agent[a], -1.0), 1.0);
  }
  state_.step_count += 1;

  StepResult out;
  const double d_target = dist(state_.agent, state_.target);
  out.reward = -d_target;
  if (d_target < config_.success_radius) {
    out.reward += 10.0;
    out.done = true;
    out.success = true;
  } else if (config_.task == Task::kColorTouch &&
             dist(state_.agent, state_.distractor) < config_.success_radius) {
    out.reward -= 5.0;
    out.done = true;
  } else if (state_.step_count >= config_.horizon) {
    out.truncated = true;  // done stays false so bootstrapping continues
  }
  state_.finished = out.done || out.truncated;

  out.obs = render_with(state_.episode_rng);
  out.state = proprioception();
  return out;
}

PointCloud Env::render() const {
  Rng copy = state_.episode_rng;
  return render_with(copy);
}

PointCloud Env::render_with(Rng& rng) const {
  const bool color = uses_color();
  PointCloud cloud;
  if (color) cloud.colors.emplace();

  const Vec3 gray{0.5, 0.5, 0.5};
  const Vec3 red{1.0, 0.0, 0.0};
  const Vec3 blue{0.0, 0.0, 1.0};
  const Vec3 floor_gray{0.3, 0.3, 0.3};

  append_sphere_cluster(cloud, state_.agent, config_.cluster_radius,
                        config_.cluster_points, color ? &gray : nullptr, rng);
  append_sphere_cluster(cloud, state_.target, config_.cluster_radius,
                        config_.cluster_points, color ? &red : nullptr, rng);
  if (config_.task == Task::kColorTouch) {
    append_sphere_cluster(cloud, state_.distractor, config_.cluster_radius,
                          config_.cluster_points, color ? &blue : nullptr, rng);
  }
  for (std::size_t i = 0; i < config_.floor_points; ++i) {
    cloud.positions.push_back({rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), -1.0});
    if (color) cloud.colors->push_back(floor_gray);
  }

  // per-episode viewpoint: rotation about the vertical axis plus a shift
  const double c = std::cos(state_.view_angle);
  const double s = std::sin(state_.view_angle);
  for (Vec3& p : cloud.positions) {
    const double x = c * p[0] - s * p[1];
    const double y = s * p[0] + c * p[1];
    p[0] = x + state_.view_shift[0];
    p[1] = y + state_.view_shift[1];
    p[2] = p[2] + state_.view_shift[2];
  }

  PreprocessConfig pre;
  pre.max_points = config_.max_obs_points;
  pre.normalization = config_.normalization;
  PointCloud obs = preprocess(cloud, pre, rng);

  if (config_.zero_colors && obs.has_colors()) {
    for (Vec3& col : *obs.colors) col = {0.0, 0.0, 0.0};
  }
  return obs;
}

std::vector<double> Env::proprioception() const {
  return {state_.agent[0], state_.agent[1], state_.agent[2]};
}

}  // namespace pprl
