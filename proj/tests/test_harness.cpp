#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aux_pretrain.hpp"
#include "cloud_io.hpp"
#include "config.hpp"
#include "metrics.hpp"
#include "oracles.hpp"
#include "trainer.hpp"

using namespace pprl;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string micro_config_json(const std::string& out_dir,
                              std::uint64_t total_steps, std::uint64_t seed,
                              std::size_t eval_interval = 100) {
  std::ostringstream json;
  json << R"({
  "env": {"name": "point_reach", "max_obs_points": 64, "horizon": 20},
  "encoder": {"centroids": 3, "patch_size": 4, "token_dim": 12, "layers": 1,
              "heads": 2, "pointnet_width": 6},
  "sac": {"batch_size": 8, "replay_capacity": 512, "hidden_width": 24,
          "lr": 0.001, "replay_ratio": 0.5},
  "train": {"total_steps": )"
       << total_steps << R"(, "eval_interval": )" << eval_interval
       << R"(, "eval_episodes": 3, "init_random_steps": 16, "seed": )" << seed
       << R"(, "out_dir": ")" << out_dir << R"("}
})";
  return json.str();
}

RunConfig micro_config(const std::string& out_dir, std::uint64_t total_steps,
                       std::uint64_t seed, std::size_t eval_interval = 100) {
  return parse_run_config(micro_config_json(out_dir, total_steps, seed,
                                            eval_interval),
                          "micro");
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pprl_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config: parses, validates and rejects unknown keys") {
  const RunConfig cfg = micro_config("x", 10, 3);
  CHECK(cfg.centroids == 3);
  CHECK(cfg.encoder.patch_size == 4);
  CHECK(cfg.agent.batch_size == 8);
  CHECK(cfg.agent.replay_ratio == 0.5);
  CHECK(cfg.encoder.point_features == 3);
  CHECK(cfg.env.horizon == 20);

  SUBCASE("unknown key carries a location") {
    try {
      parse_run_config("{\n  \"env\": {},\n  \"oops\": 1\n}", "cfg.json");
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
      CHECK(std::string(e.what()).find("cfg.json:3") != std::string::npos);
      CHECK(std::string(e.what()).find("oops") != std::string::npos);
    }
  }

  SUBCASE("parse errors carry a line number") {
    try {
      parse_run_config("{\n  \"env\": {\n", "broken.json");
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
      CHECK(std::string(e.what()).find("broken.json:") != std::string::npos);
    }
  }

  SUBCASE("semantic violations are rejected") {
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"env": {"name": "nowhere"}, "train": {"out_dir": "x"}})",
            "m"),
        Error);
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"sac": {"gamma": 1.5}, "train": {"out_dir": "x"}})", "m"),
        Error);
  }

  SUBCASE("dump and parse round-trip") {
    const std::string dumped = dump_run_config(cfg);
    const RunConfig again = parse_run_config(dumped, "dump");
    CHECK(dump_run_config(again) == dumped);
  }
}

TEST_CASE("bootstrap CI: degenerate and seeded behavior") {
  const ConfidenceInterval unit =
      bootstrap_ci(std::vector<double>(20, 1.0), 10000, 0.95, 5);
  CHECK(unit.lo == 1.0);
  CHECK(unit.hi == 1.0);

  Rng rng(7);
  std::vector<double> values(50);
  for (auto& v : values) v = rng.uniform(0, 1);
  const ConfidenceInterval a = bootstrap_ci(values, 2000, 0.95, 11);
  const ConfidenceInterval b = bootstrap_ci(values, 2000, 0.95, 11);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  const double mean = mean_of(values);
  CHECK(a.lo <= mean);
  CHECK(a.hi >= mean);
  CHECK(a.lo < a.hi);
}

TEST_CASE("checkpoint: agent state round-trips bit-exactly") {
  const fs::path dir = fresh_dir("ckpt_roundtrip");
  RunConfig cfg = micro_config((dir / "run").string(), 0, 17);
  Agent agent = agent_from_config(cfg);
  // perturb some state so the round-trip is non-trivial
  agent.env_steps = 123;
  agent.update_steps = 45;
  agent.rng_update.next_u64();

  const std::string p1 = (dir / "a.bin").string();
  const std::string p2 = (dir / "b.bin").string();
  save_checkpoint(p1, cfg, agent, nullptr, nullptr);
  LoadedCheckpoint loaded = load_checkpoint(p1);
  CHECK(loaded.agent.env_steps == 123);
  CHECK(loaded.agent.update_steps == 45);
  CHECK(loaded.agent.rng_update == agent.rng_update);
  save_checkpoint(p2, loaded.config, loaded.agent, nullptr, nullptr);
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("checkpoint: rejects foreign files") {
  const fs::path dir = fresh_dir("ckpt_bad");
  const std::string path = (dir / "not_a_ckpt.bin").string();
  std::ofstream(path) << "definitely not a checkpoint";
  try {
    load_checkpoint(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
  }
}

TEST_CASE("train: zero steps writes headers and a final checkpoint") {
  const fs::path dir = fresh_dir("train_zero");
  const RunConfig cfg = micro_config((dir / "run").string(), 0, 23);
  const TrainReport report = train_run(cfg, nullptr);
  CHECK(report.steps_run == 0);
  CHECK(read_file((dir / "run/metrics.csv").string()) ==
        "step,episode,episode_return,episode_length,success,critic_loss,"
        "actor_loss,aux_loss,alpha,q_mean\n");
  CHECK(fs::exists(dir / "run/ckpt_final.bin"));
  CHECK(fs::exists(dir / "run/run_manifest.json"));
  CHECK(fs::exists(dir / "run/summary.json"));
}

TEST_CASE("train: fixed seeds reproduce the metrics byte for byte") {
  const fs::path dir = fresh_dir("train_det");
  const RunConfig a = micro_config((dir / "a").string(), 150, 31);
  const RunConfig b = micro_config((dir / "b").string(), 150, 31);
  train_run(a, nullptr);
  train_run(b, nullptr);
  CHECK(read_file((dir / "a/metrics.csv").string()) ==
        read_file((dir / "b/metrics.csv").string()));
  CHECK(read_file((dir / "a/eval.csv").string()) ==
        read_file((dir / "b/eval.csv").string()));

  const RunConfig c = micro_config((dir / "c").string(), 150, 32);
  train_run(c, nullptr);
  CHECK(read_file((dir / "a/metrics.csv").string()) !=
        read_file((dir / "c/metrics.csv").string()));
}

TEST_CASE("train: resuming from a checkpoint replays the uninterrupted run") {
  const fs::path dir = fresh_dir("train_resume");
  const RunConfig full = micro_config((dir / "full").string(), 200, 41, 50);
  train_run(full, nullptr);

  const RunConfig resumed = micro_config((dir / "resumed").string(), 200, 41, 50);
  const std::string ckpt = (dir / "full/ckpt_step_100.bin").string();
  REQUIRE(fs::exists(ckpt));
  train_run(resumed, &ckpt);

  // every metrics row past step 100 must match exactly
  std::istringstream full_csv(read_file((dir / "full/metrics.csv").string()));
  std::vector<std::string> expected;
  std::string line;
  bool header = true;
  while (std::getline(full_csv, line)) {
    if (header) {
      header = false;
      continue;
    }
    const double step = std::strtod(line.c_str(), nullptr);
    if (step > 100) expected.push_back(line);
  }
  std::istringstream res_csv(read_file((dir / "resumed/metrics.csv").string()));
  std::vector<std::string> got;
  header = true;
  while (std::getline(res_csv, line)) {
    if (header) {
      header = false;
      continue;
    }
    got.push_back(line);
  }
  CHECK(got == expected);

  // the final eval rows agree as well
  const std::string full_eval = read_file((dir / "full/eval.csv").string());
  const std::string res_eval = read_file((dir / "resumed/eval.csv").string());
  CHECK(full_eval.substr(full_eval.rfind('\n', full_eval.size() - 2)) ==
        res_eval.substr(res_eval.rfind('\n', res_eval.size() - 2)));
}

TEST_CASE("eval: argument checks, dumps and the random-policy floor") {
  const fs::path dir = fresh_dir("eval_basics");
  const RunConfig cfg = micro_config((dir / "run").string(), 0, 47);
  Agent agent = agent_from_config(cfg);

  CHECK_THROWS_AS(evaluate_agent(agent, cfg.env, 0, 1, nullptr), Error);

  const std::string dump = (dir / "dump").string();
  const EvalReport r = evaluate_agent(agent, cfg.env, 2, 7, &dump);
  CHECK(r.episodes == 2);
  bool found = false;
  for (const auto& entry : fs::directory_iterator(dump)) {
    const PointCloud cloud = load_cloud(entry.path().string());
    CHECK(cloud.size() >= 1);
    found = true;
  }
  CHECK(found);

  // an untrained policy essentially never stumbles into the target
  const EvalReport floor = evaluate_agent(agent, cfg.env, 100, 11, nullptr);
  CHECK(floor.mean_success < 0.1);
  CHECK(floor.success_lo >= 0.0);
  CHECK(floor.success_hi <= 1.0);
  CHECK(floor.success_lo <= floor.mean_success);
  CHECK(floor.mean_success <= floor.success_hi);
}

TEST_CASE("reconstruct: untrained bound, improvement after training, round-trip") {
  const fs::path dir = fresh_dir("reconstruct");
  RunConfig cfg = micro_config((dir / "run").string(), 0, 53);
  Agent agent = agent_from_config(cfg);

  const std::vector<PointCloud> shapes =
      aux_pretrain::synthetic_shapes(1, 64, 99);
  const std::string cloud_path = (dir / "shape.xyz").string();
  save_cloud(shapes[0], cloud_path);
  const PointCloud cloud = load_cloud(cloud_path);

  const ReconstructReport before =
      reconstruct_run(agent, cloud, (dir / "before").string());
  CHECK(before.patches == 3);
  CHECK(before.mean_chamfer > 0.0);
  // sanity bound: squared diameter of a [-1,1]^3 shape
  CHECK(before.mean_chamfer < 2.0 * 12.0);
  CHECK(before.mean_color_loss == -1.0);

  // outputs re-parse through the same reader
  const PointCloud pred = load_cloud(before.predicted_path);
  const PointCloud gt = load_cloud(before.ground_truth_path);
  CHECK(pred.size() == 3 * 4);
  CHECK(gt.size() == 3 * 4);

  aux_pretrain::train(agent, shapes, 300, 1, 7);
  const ReconstructReport after =
      reconstruct_run(agent, cloud, (dir / "after").string());
  CHECK(after.mean_chamfer < 0.5 * before.mean_chamfer);

  // checkpoints preserve the behavior exactly
  const std::string ckpt = (dir / "trained.bin").string();
  save_checkpoint(ckpt, cfg, agent, nullptr, nullptr);
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const ReconstructReport again =
      reconstruct_run(loaded.agent, cloud, (dir / "again").string());
  CHECK(again.mean_chamfer == after.mean_chamfer);
}

TEST_CASE("reconstruct: feature-width mismatch is a descriptive error") {
  const fs::path dir = fresh_dir("reconstruct_mismatch");
  RunConfig cfg = micro_config((dir / "run").string(), 0, 59);
  Agent agent = agent_from_config(cfg);  // expects plain xyz
  PointCloud colored = aux_pretrain::synthetic_shapes(1, 64, 1)[0];
  colored.colors.emplace(colored.size(), Vec3{0.5, 0.5, 0.5});
  try {
    reconstruct_run(agent, colored, (dir / "out").string());
    FAIL("expected invalid-argument");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("xyz") != std::string::npos);
  }
}

TEST_CASE("bench: argument validation and stable output shape") {
  CHECK_THROWS_AS(bench_run("sort", {16}), Error);
  CHECK_THROWS_AS(bench_run("fps", {0}), Error);
  CHECK_THROWS_AS(bench_run("fps", {}), Error);

  const std::string a = bench_run("chamfer", {16, 64});
  std::istringstream in(a);
  std::string line;
  std::getline(in, line);
  CHECK(line == "kernel,size,median_us");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    CHECK(line.rfind("chamfer,", 0) == 0);
    ++rows;
  }
  CHECK(rows == 2);

  for (const char* kernel : {"fps", "knn", "morton", "voxel"}) {
    const std::string csv = bench_run(kernel, {32});
    CHECK(csv.find(kernel) != std::string::npos);
  }
}

TEST_CASE("PPRL_THREADS caps the worker count") {
  setenv("PPRL_THREADS", "1", 1);
  CHECK(worker_thread_cap() == 1);
  unsetenv("PPRL_THREADS");
  CHECK(worker_thread_cap() >= 1);
}

TEST_CASE("manifest echoes a reproducible configuration") {
  const fs::path dir = fresh_dir("manifest");
  const RunConfig cfg = micro_config((dir / "run").string(), 0, 61);
  train_run(cfg, nullptr);
  const std::string manifest = read_file((dir / "run/run_manifest.json").string());
  CHECK(manifest.find("\"seed\": 61") != std::string::npos);
  CHECK(manifest.find("\"version\"") != std::string::npos);
  CHECK(manifest.find("\"token_dim\": 12") != std::string::npos);
}
