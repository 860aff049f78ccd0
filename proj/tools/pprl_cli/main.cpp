// Command-line front end over the pprl shared library (C API only).
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pprl/pprl.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int exit_code_for(pprl_status status) {
  switch (status) {
    case PPRL_OK:
      return kExitOk;
    case PPRL_ERR_CONFIG:
    case PPRL_ERR_PARSE:
      return kExitConfig;
    default:
      return kExitRuntime;
  }
}

int fail(pprl_status status) {
  std::fprintf(stderr, "error (%s): %s\n", pprl_status_name(status),
               pprl_last_error());
  return exit_code_for(status);
}

int run_train(const std::string& config_path, const std::string& resume) {
  pprl_run_config* config = nullptr;
  pprl_status s = pprl_config_load(config_path.c_str(), &config);
  if (s != PPRL_OK) {
    // any failure to produce a usable config counts as a config error
    std::fprintf(stderr, "error (%s): %s\n", pprl_status_name(s),
                 pprl_last_error());
    return kExitConfig;
  }

  pprl_train_report report{};
  s = pprl_train(config, resume.empty() ? nullptr : resume.c_str(), &report);
  pprl_config_free(config);
  if (s != PPRL_OK) return fail(s);

  std::printf("steps_run=%llu episodes=%llu best_eval_success=%.4f "
              "final_eval_success=%.4f steps_to_stop=%llu wallclock_s=%.1f\n",
              static_cast<unsigned long long>(report.steps_run),
              static_cast<unsigned long long>(report.episodes),
              report.best_eval_success, report.final_eval_success,
              static_cast<unsigned long long>(report.steps_to_stop),
              report.wallclock_seconds);
  return kExitOk;
}

int run_eval(const std::string& checkpoint, std::size_t episodes,
             std::uint64_t seed, const std::string& dump_dir) {
  pprl_agent* agent = nullptr;
  pprl_status s = pprl_agent_load(checkpoint.c_str(), &agent);
  if (s != PPRL_OK) return fail(s);

  pprl_eval_report report{};
  s = pprl_eval(agent, episodes, seed,
                dump_dir.empty() ? nullptr : dump_dir.c_str(), &report);
  pprl_agent_free(agent);
  if (s != PPRL_OK) return fail(s);

  std::printf("episodes=%zu\n", report.episodes);
  std::printf("success_rate=%.4f ci95=[%.4f, %.4f]\n", report.mean_success,
              report.success_lo, report.success_hi);
  std::printf("mean_return=%.4f ci95=[%.4f, %.4f]\n", report.mean_return,
              report.return_lo, report.return_hi);
  return kExitOk;
}

int run_reconstruct(const std::string& checkpoint, const std::string& cloud,
                    const std::string& out_dir) {
  pprl_agent* agent = nullptr;
  pprl_status s = pprl_agent_load(checkpoint.c_str(), &agent);
  if (s != PPRL_OK) return fail(s);

  pprl_reconstruct_report report{};
  s = pprl_reconstruct(agent, cloud.c_str(), out_dir.c_str(), &report);
  pprl_agent_free(agent);
  if (s != PPRL_OK) return fail(s);

  std::printf("patches=%zu mean_chamfer=%.6g", report.patches,
              report.mean_chamfer);
  if (report.mean_color_loss >= 0.0) {
    std::printf(" mean_color_loss=%.6g", report.mean_color_loss);
  }
  std::printf("\noutputs written to %s\n", out_dir.c_str());
  return kExitOk;
}

int run_bench(const std::string& kernel, const std::vector<std::size_t>& sizes) {
  char* csv = nullptr;
  const pprl_status s = pprl_bench(kernel.c_str(), sizes.data(), sizes.size(), &csv);
  if (s != PPRL_OK) return fail(s);
  std::fputs(csv, stdout);
  pprl_string_free(csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pprl: point-cloud patch RL trainer"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint, cloud, out_dir, dump_dir, kernel;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes;

  CLI::App* train = app.add_subcommand("train", "train an agent from a config");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes");
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_option("--dump-clouds", dump_dir, "write observations here");

  CLI::App* recon = app.add_subcommand("reconstruct",
                                       "masked reconstruction of a cloud file");
  recon->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  recon->add_option("--cloud", cloud, "point-cloud file")->required();
  recon->add_option("--out", out_dir, "output directory")->required();

  CLI::App* bench = app.add_subcommand("bench", "time a geometry kernel");
  bench->add_option("--kernel", kernel, "fps|knn|morton|chamfer|voxel")->required();
  bench->add_option("--sizes", sizes, "cloud sizes")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (train->parsed()) return run_train(config_path, resume);
  if (eval->parsed()) return run_eval(checkpoint, episodes, seed, dump_dir);
  if (recon->parsed()) return run_reconstruct(checkpoint, cloud, out_dir);
  return run_bench(kernel, sizes);
}
