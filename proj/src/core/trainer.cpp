#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cloud_io.hpp"

namespace pprl {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

unsigned worker_thread_cap() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PPRL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = std::min<unsigned>(cap, static_cast<unsigned>(v));
  }
  return cap;
}

namespace {

std::uint64_t derived_seed(std::uint64_t base, std::uint64_t salt,
                           std::uint64_t index) {
  return Rng::hash_combine(Rng::hash_combine(base, salt), index);
}

constexpr std::uint64_t kEpisodeSalt = 0x45505349;  // episode streams
constexpr std::uint64_t kEvalSalt = 0x4556414C;     // eval streams
constexpr std::uint64_t kBootSalt = 0x424F4F54;     // bootstrap resampling

std::vector<double> eval_act(Agent& agent, const PointCloud& obs,
                             const std::vector<double>& state,
                             std::uint64_t fps_seed) {
  ad::NoGrad guard;
  ad::Tensor fused = encode_fused(agent, obs, state, fps_seed);
  ad::Tensor action = actor_deterministic(agent, fused);
  std::vector<double> out(agent.action_dim);
  for (Eigen::Index j = 0; j < agent.action_dim; ++j) out[j] = action.value()(0, j);
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw_io_error("cannot write " + path);
  out << text;
}

}  // namespace

EvalReport evaluate_agent(Agent& agent, const EnvConfig& env_config,
                          std::size_t episodes, std::uint64_t seed,
                          const std::string* dump_dir) {
  require(episodes >= 1, ErrorCode::invalid_argument,
          "evaluate_agent: need at least one episode");
  if (dump_dir) fs::create_directories(*dump_dir);

  std::vector<double> successes(episodes, 0.0);
  std::vector<double> returns(episodes, 0.0);

  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Env env(env_config);
    const std::uint64_t ep_seed = derived_seed(seed, kEvalSalt, ep);
    ResetResult rr = env.reset(ep_seed);
    PointCloud obs = std::move(rr.obs);
    std::vector<double> state = std::move(rr.state);
    double ep_return = 0.0;
    bool success = false;

    for (std::size_t t = 0;; ++t) {
      if (dump_dir) {
        char name[64];
        std::snprintf(name, sizeof(name), "ep%03zu_step%03zu.xyz", ep, t);
        save_cloud(obs, (fs::path(*dump_dir) / name).string());
      }
      const std::vector<double> action =
          eval_act(agent, obs, state, derived_seed(ep_seed, 0xACu, t));
      StepResult sr = env.step(action);
      ep_return += sr.reward;
      success = success || sr.success;
      if (sr.done || sr.truncated) break;
      obs = std::move(sr.obs);
      state = std::move(sr.state);
    }
    successes[ep] = success ? 1.0 : 0.0;
    returns[ep] = ep_return;
  }

  EvalReport report;
  report.episodes = episodes;
  report.mean_success = mean_of(successes);
  report.mean_return = mean_of(returns);
  const ConfidenceInterval ci_s =
      bootstrap_ci(successes, 10000, 0.95, derived_seed(seed, kBootSalt, 1));
  const ConfidenceInterval ci_r =
      bootstrap_ci(returns, 10000, 0.95, derived_seed(seed, kBootSalt, 2));
  report.success_lo = ci_s.lo;
  report.success_hi = ci_s.hi;
  report.return_lo = ci_r.lo;
  report.return_hi = ci_r.hi;
  return report;
}

TrainReport train_run(const RunConfig& requested, const std::string* resume_path) {
  const auto t_start = Clock::now();

  RunConfig config = requested;
  Agent agent;
  std::unique_ptr<ReplayBuffer> buffer;
  TrainerState ts;
  Env env{requested.env};

  if (resume_path != nullptr) {
    LoadedCheckpoint loaded = load_checkpoint(*resume_path);
    require(loaded.has_trainer, ErrorCode::invalid_argument,
            "train_run: checkpoint has no training state to resume from");
    config = loaded.config;
    // schedule fields follow the requested config
    config.out_dir = requested.out_dir;
    config.total_steps = requested.total_steps;
    config.eval_interval = requested.eval_interval;
    config.eval_episodes = requested.eval_episodes;
    config.stop_success_rate = requested.stop_success_rate;
    agent = std::move(loaded.agent);
    buffer = std::move(loaded.buffer);
    ts = std::move(loaded.trainer);
    env = Env(config.env);
    env.set_state(ts.env_state);
  } else {
    agent = agent_from_config(config);
    buffer = std::make_unique<ReplayBuffer>(config.agent.replay_capacity);
    env = Env(config.env);
    ResetResult rr = env.reset(derived_seed(config.seed, kEpisodeSalt, 0));
    ts.current_obs = std::move(rr.obs);
    ts.current_state = std::move(rr.state);
    ts.env_state = env.state();
  }

  fs::create_directories(config.out_dir);
  const fs::path out(config.out_dir);

  {
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["seed"] = config.seed;
    manifest["resumed_from"] = resume_path ? *resume_path : "";
    manifest["config"] = nlohmann::json::parse(dump_run_config(config));
    write_text_file((out / "run_manifest.json").string(), manifest.dump(2) + "\n");
  }

  CsvWriter metrics((out / "metrics.csv").string(),
                    {"step", "episode", "episode_return", "episode_length",
                     "success", "critic_loss", "actor_loss", "aux_loss", "alpha",
                     "q_mean"});
  CsvWriter evals((out / "eval.csv").string(),
                  {"step", "success_rate", "success_lo", "success_hi",
                   "mean_return", "return_lo", "return_hi"});

  TrainReport report;
  report.out_dir = config.out_dir;
  double final_eval = -1.0;

  bool stop = false;
  while (ts.global_step < config.total_steps && !stop) {
    std::vector<double> action(Env::kActionDim);
    if (ts.global_step < config.init_random_steps) {
      for (double& a : action) a = agent.rng_action.uniform(-1.0, 1.0);
    } else {
      action = agent_act(agent, ts.current_obs, ts.current_state, false);
    }

    StepResult sr = env.step(action);
    ts.global_step += 1;
    agent.env_steps = ts.global_step;
    ts.episode_return += sr.reward;
    ts.episode_steps += 1;

    Transition tr;
    tr.obs = ts.current_obs;
    tr.state = ts.current_state;
    tr.action = action;
    tr.reward = sr.reward;
    tr.done = sr.done;
    tr.next_obs = sr.obs;
    tr.next_state = sr.state;
    buffer->push(tr);

    ts.update_credit += config.agent.replay_ratio;
    while (ts.update_credit >= 1.0 &&
           ts.global_step >= config.init_random_steps &&
           buffer->size() >= config.agent.batch_size) {
      const UpdateMetrics um = update_step(agent, *buffer);
      ts.update_credit -= 1.0;
      if (!um.skipped) {
        ts.critic_loss_sum += um.critic_loss;
        ts.actor_loss_sum += um.actor_loss;
        ts.aux_loss_sum += um.aux_loss;
        ts.q_mean_sum += um.q_mean;
        ts.alpha_last = um.alpha;
        ts.loss_count += 1;
      }
    }

    if (sr.done || sr.truncated) {
      const double n = ts.loss_count > 0 ? static_cast<double>(ts.loss_count) : 1.0;
      metrics.row({static_cast<double>(ts.global_step),
                   static_cast<double>(ts.episode_index), ts.episode_return,
                   static_cast<double>(ts.episode_steps),
                   sr.success ? 1.0 : 0.0, ts.critic_loss_sum / n,
                   ts.actor_loss_sum / n, ts.aux_loss_sum / n, ts.alpha_last,
                   ts.q_mean_sum / n});
      metrics.flush();
      report.episodes += 1;
      ts.episode_index += 1;
      ts.episode_return = 0.0;
      ts.episode_steps = 0;
      ts.critic_loss_sum = ts.actor_loss_sum = ts.aux_loss_sum = 0.0;
      ts.q_mean_sum = 0.0;
      ts.loss_count = 0;
      ResetResult rr =
          env.reset(derived_seed(config.seed, kEpisodeSalt, ts.episode_index));
      ts.current_obs = std::move(rr.obs);
      ts.current_state = std::move(rr.state);
    } else {
      ts.current_obs = std::move(sr.obs);
      ts.current_state = std::move(sr.state);
    }

    if (ts.global_step % config.eval_interval == 0) {
      const EvalReport er =
          evaluate_agent(agent, config.env, config.eval_episodes,
                         derived_seed(config.seed, kEvalSalt, ts.global_step),
                         nullptr);
      evals.row({static_cast<double>(ts.global_step), er.mean_success,
                 er.success_lo, er.success_hi, er.mean_return, er.return_lo,
                 er.return_hi});
      evals.flush();
      final_eval = er.mean_success;
      ts.best_eval_success = std::max(ts.best_eval_success, er.mean_success);
      if (config.stop_success_rate >= 0.0 &&
          er.mean_success >= config.stop_success_rate && ts.steps_to_stop == 0) {
        ts.steps_to_stop = ts.global_step;
        stop = true;
      }

      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_step_%llu.bin",
                    static_cast<unsigned long long>(ts.global_step));
      ts.env_state = env.state();
      save_checkpoint((out / name).string(), config, agent, &ts, buffer.get());
    }
  }

  ts.env_state = env.state();
  save_checkpoint((out / "ckpt_final.bin").string(), config, agent, &ts,
                  buffer.get());

  report.steps_run = ts.global_step;
  report.best_eval_success = ts.best_eval_success;
  report.final_eval_success = final_eval;
  report.steps_to_stop = ts.steps_to_stop;
  report.stopped_early = stop;
  report.wallclock_seconds =
      std::chrono::duration<double>(Clock::now() - t_start).count();

  {
    nlohmann::json summary;
    summary["steps_run"] = report.steps_run;
    summary["episodes"] = report.episodes;
    summary["best_eval_success"] = report.best_eval_success;
    summary["final_eval_success"] = report.final_eval_success;
    summary["steps_to_stop"] = report.steps_to_stop;
    summary["stopped_early"] = report.stopped_early;
    summary["wallclock_seconds"] = report.wallclock_seconds;
    write_text_file((out / "summary.json").string(), summary.dump(2) + "\n");
  }
  return report;
}

ReconstructReport reconstruct_run(Agent& agent, const PointCloud& cloud,
                                  const std::string& out_dir) {
  cloud.validate();
  const bool want_color = agent.enc_cfg.point_features == 6;
  require(cloud.has_colors() == want_color, ErrorCode::invalid_argument,
          want_color ? "reconstruct: checkpoint expects colored clouds"
                     : "reconstruct: checkpoint expects plain xyz clouds");

  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  ad::NoGrad guard;
  const std::uint64_t seed = Rng::hash_combine(0x7265636Full, agent.env_steps);
  const PatchSet patches = patchify(agent, cloud, seed);
  const TokenSequence seq = make_token_sequence(patches, agent.tokenizer, 0);
  const AttentionMask mask = build_decoder_mask(
      seq.n_real, 0, agent.enc_cfg.mask_ratio, agent.enc_cfg.prefix_fraction,
      Rng::hash_combine(seed, 1));
  const EncoderOutput enc =
      encode(seq, EncodeMode::kReconstruction, &mask, agent.transformer);
  const ad::Tensor pred = decode_and_predict(enc, seq, mask, agent.transformer);

  // token rows follow the Morton order, so re-sort the patches the same way
  std::vector<std::size_t> order;
  const PatchSet sorted = morton_sorted(patches, &order);

  const Eigen::Index f = agent.enc_cfg.point_features;
  const Eigen::Index k = static_cast<Eigen::Index>(agent.enc_cfg.patch_size);

  PointCloud pred_cloud, gt_cloud;
  if (want_color) {
    pred_cloud.colors.emplace();
    gt_cloud.colors.emplace();
  }

  ReconstructReport report;
  report.patches = seq.n_real;
  double chamfer_sum = 0.0;
  double color_sum = 0.0;
  for (std::size_t p = 0; p < seq.n_real; ++p) {
    const Vec3& centroid = sorted.centroids[p];
    PatchPoints pd;
    for (Eigen::Index j = 0; j < k; ++j) {
      Vec3 rel;
      for (int a = 0; a < 3; ++a) {
        rel[a] = pred.value()(static_cast<Eigen::Index>(p), j * f + a);
      }
      pd.positions.push_back(rel);
      pred_cloud.positions.push_back(
          {centroid[0] + rel[0], centroid[1] + rel[1], centroid[2] + rel[2]});
      if (want_color) {
        Vec3 col;
        for (int a = 0; a < 3; ++a) {
          col[a] = std::min(
              1.0, std::max(0.0, pred.value()(static_cast<Eigen::Index>(p),
                                              j * f + 3 + a)));
        }
        pd.colors.push_back(col);
        pred_cloud.colors->push_back(col);
      }
    }
    PatchPoints gt = PatchPoints::from_patch(sorted, p);
    for (std::size_t j = 0; j < gt.positions.size(); ++j) {
      const Vec3& rel = gt.positions[j];
      gt_cloud.positions.push_back(
          {centroid[0] + rel[0], centroid[1] + rel[1], centroid[2] + rel[2]});
      if (want_color) gt_cloud.colors->push_back(gt.colors[j]);
    }
    const double ch = chamfer_value(pd.positions, gt.positions);
    report.per_patch_chamfer.push_back(ch);
    chamfer_sum += ch;
    if (want_color) color_sum += color_loss_value(pd, gt);
  }
  report.mean_chamfer = chamfer_sum / static_cast<double>(seq.n_real);
  report.mean_color_loss =
      want_color ? color_sum / static_cast<double>(seq.n_real) : -1.0;

  report.predicted_path = (out / "predicted_patches.xyz").string();
  report.ground_truth_path = (out / "ground_truth_patches.xyz").string();
  save_cloud(pred_cloud, report.predicted_path);
  save_cloud(gt_cloud, report.ground_truth_path);
  return report;
}

namespace {

PointCloud random_cloud(std::size_t n, bool colors, Rng& rng) {
  PointCloud cloud;
  cloud.positions.resize(n);
  for (Vec3& p : cloud.positions) {
    p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  }
  if (colors) {
    cloud.colors.emplace(n);
    for (Vec3& c : *cloud.colors) {
      c = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
    }
  }
  return cloud;
}

}  // namespace

std::string bench_run(const std::string& kernel,
                      const std::vector<std::size_t>& sizes) {
  const bool known = kernel == "fps" || kernel == "knn" || kernel == "morton" ||
                     kernel == "chamfer" || kernel == "voxel";
  require(known, ErrorCode::invalid_argument,
          "bench: unknown kernel `" + kernel +
              "` (expected fps|knn|morton|chamfer|voxel)");
  require(!sizes.empty(), ErrorCode::invalid_argument, "bench: no sizes given");
  for (const std::size_t s : sizes) {
    require(s >= 1, ErrorCode::invalid_argument, "bench: size must be >= 1");
  }

  std::ostringstream csv;
  csv << "kernel,size,median_us\n";
  Rng rng(0xBE7Cu);
  for (const std::size_t size : sizes) {
    const PointCloud cloud = random_cloud(size, false, rng);
    const PointCloud other = random_cloud(size, false, rng);
    std::vector<double> times;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = Clock::now();
      if (kernel == "fps") {
        farthest_point_sample(cloud, std::min<std::size_t>(64, size), rep);
      } else if (kernel == "knn") {
        const std::size_t n_c = std::min<std::size_t>(16, size);
        std::vector<std::size_t> centroids(n_c);
        for (std::size_t i = 0; i < n_c; ++i) centroids[i] = i;
        knn_group(cloud, centroids, std::min<std::size_t>(32, size));
      } else if (kernel == "morton") {
        morton_rank(cloud.positions);
      } else if (kernel == "chamfer") {
        chamfer_value(cloud.positions, other.positions);
      } else {
        voxel_downsample(cloud, 0.05);
      }
      const auto t1 = Clock::now();
      times.push_back(
          std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    csv << kernel << ',' << size << ',' << format_number(times[3]) << '\n';
  }
  return csv.str();
}

}  // namespace pprl
