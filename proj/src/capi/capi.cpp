#include "pprl/pprl.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "../core/checkpoint.hpp"
#include "../core/cloud_io.hpp"
#include "../core/config.hpp"
#include "../core/trainer.hpp"

struct pprl_cloud {
  pprl::PointCloud cloud;
};

struct pprl_run_config {
  pprl::RunConfig config;
};

struct pprl_agent {
  pprl::RunConfig config;
  pprl::Agent agent;
};

namespace {

thread_local std::string t_last_error;

pprl_status to_status(pprl::ErrorCode code) {
  return static_cast<pprl_status>(static_cast<int>(code));
}

template <typename Fn>
pprl_status guarded(Fn&& fn) {
  try {
    fn();
    return PPRL_OK;
  } catch (const pprl::Error& e) {
    t_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return PPRL_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown error";
    return PPRL_ERR_INTERNAL;
  }
}

pprl_status need(bool cond, const char* msg) {
  if (cond) return PPRL_OK;
  t_last_error = msg;
  return PPRL_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* pprl_status_name(pprl_status status) {
  switch (status) {
    case PPRL_OK: return "ok";
    case PPRL_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case PPRL_ERR_INVALID_STATE: return "invalid_state";
    case PPRL_ERR_DEGENERATE_INPUT: return "degenerate_input";
    case PPRL_ERR_CONFIG: return "config";
    case PPRL_ERR_PARSE: return "parse";
    case PPRL_ERR_IO: return "io";
    case PPRL_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* pprl_last_error(void) { return t_last_error.c_str(); }

const char* pprl_version(void) { return pprl::kVersion; }

pprl_status pprl_cloud_create(const double* xyz, const double* rgb, size_t n,
                              pprl_cloud** out) {
  if (pprl_status s = need(xyz && out && n > 0, "pprl_cloud_create: bad arguments"))
    return s;
  return guarded([&] {
    auto cloud = std::make_unique<pprl_cloud>();
    cloud->cloud.positions.resize(n);
    for (size_t i = 0; i < n; ++i) {
      cloud->cloud.positions[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
    }
    if (rgb) {
      cloud->cloud.colors.emplace(n);
      for (size_t i = 0; i < n; ++i) {
        (*cloud->cloud.colors)[i] = {rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]};
      }
    }
    cloud->cloud.validate();
    *out = cloud.release();
  });
}

pprl_status pprl_cloud_load(const char* path, pprl_cloud** out) {
  if (pprl_status s = need(path && out, "pprl_cloud_load: bad arguments")) return s;
  return guarded([&] {
    auto cloud = std::make_unique<pprl_cloud>();
    cloud->cloud = pprl::load_cloud(path);
    *out = cloud.release();
  });
}

pprl_status pprl_cloud_save(const pprl_cloud* cloud, const char* path) {
  if (pprl_status s = need(cloud && path, "pprl_cloud_save: bad arguments"))
    return s;
  return guarded([&] { pprl::save_cloud(cloud->cloud, path); });
}

size_t pprl_cloud_size(const pprl_cloud* cloud) {
  return cloud ? cloud->cloud.size() : 0;
}

int pprl_cloud_has_colors(const pprl_cloud* cloud) {
  return cloud && cloud->cloud.has_colors() ? 1 : 0;
}

pprl_status pprl_cloud_positions(const pprl_cloud* cloud, double* out) {
  if (pprl_status s = need(cloud && out, "pprl_cloud_positions: bad arguments"))
    return s;
  for (size_t i = 0; i < cloud->cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) out[3 * i + a] = cloud->cloud.positions[i][a];
  }
  return PPRL_OK;
}

pprl_status pprl_cloud_colors(const pprl_cloud* cloud, double* out) {
  if (pprl_status s = need(cloud && out, "pprl_cloud_colors: bad arguments"))
    return s;
  if (pprl_status s =
          need(cloud->cloud.has_colors(), "pprl_cloud_colors: cloud has no colors"))
    return s;
  for (size_t i = 0; i < cloud->cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) out[3 * i + a] = (*cloud->cloud.colors)[i][a];
  }
  return PPRL_OK;
}

void pprl_cloud_free(pprl_cloud* cloud) { delete cloud; }

pprl_status pprl_fps(const pprl_cloud* cloud, size_t n, uint64_t seed,
                     size_t* out_indices) {
  if (pprl_status s = need(cloud && out_indices, "pprl_fps: bad arguments"))
    return s;
  return guarded([&] {
    const auto idx = pprl::farthest_point_sample(cloud->cloud, n, seed);
    std::memcpy(out_indices, idx.data(), idx.size() * sizeof(size_t));
  });
}

pprl_status pprl_knn_group(const pprl_cloud* cloud,
                           const size_t* centroid_indices, size_t n_centroids,
                           size_t k, size_t* out_indices) {
  if (pprl_status s = need(cloud && centroid_indices && out_indices && n_centroids,
                           "pprl_knn_group: bad arguments"))
    return s;
  return guarded([&] {
    const std::vector<size_t> centers(centroid_indices,
                                      centroid_indices + n_centroids);
    const pprl::PatchSet set = pprl::knn_group(cloud->cloud, centers, k);
    for (size_t i = 0; i < set.patch_count(); ++i) {
      for (size_t j = 0; j < k; ++j) {
        out_indices[i * k + j] = set.source_indices[i][j];
      }
    }
  });
}

pprl_status pprl_morton_rank(const pprl_cloud* cloud, size_t* out_order) {
  if (pprl_status s = need(cloud && out_order, "pprl_morton_rank: bad arguments"))
    return s;
  return guarded([&] {
    const auto order = pprl::morton_rank(cloud->cloud.positions);
    std::memcpy(out_order, order.data(), order.size() * sizeof(size_t));
  });
}

pprl_status pprl_voxel_downsample(const pprl_cloud* cloud, double voxel_size,
                                  pprl_cloud** out) {
  if (pprl_status s = need(cloud && out, "pprl_voxel_downsample: bad arguments"))
    return s;
  return guarded([&] {
    auto result = std::make_unique<pprl_cloud>();
    result->cloud = pprl::voxel_downsample(cloud->cloud, voxel_size);
    *out = result.release();
  });
}

pprl_status pprl_chamfer(const pprl_cloud* a, const pprl_cloud* b, double* out) {
  if (pprl_status s = need(a && b && out, "pprl_chamfer: bad arguments")) return s;
  return guarded([&] {
    *out = pprl::chamfer_value(a->cloud.positions, b->cloud.positions);
  });
}

pprl_status pprl_config_load(const char* path, pprl_run_config** out) {
  if (pprl_status s = need(path && out, "pprl_config_load: bad arguments"))
    return s;
  return guarded([&] {
    auto config = std::make_unique<pprl_run_config>();
    config->config = pprl::load_run_config(path);
    *out = config.release();
  });
}

void pprl_config_free(pprl_run_config* config) { delete config; }

pprl_status pprl_train(const pprl_run_config* config,
                       const char* resume_checkpoint, pprl_train_report* report) {
  if (pprl_status s = need(config != nullptr, "pprl_train: bad arguments"))
    return s;
  return guarded([&] {
    const std::string resume = resume_checkpoint ? resume_checkpoint : "";
    const pprl::TrainReport r =
        pprl::train_run(config->config, resume.empty() ? nullptr : &resume);
    if (report) {
      report->steps_run = r.steps_run;
      report->episodes = r.episodes;
      report->final_eval_success = r.final_eval_success;
      report->best_eval_success = r.best_eval_success;
      report->steps_to_stop = r.steps_to_stop;
      report->stopped_early = r.stopped_early ? 1 : 0;
      report->wallclock_seconds = r.wallclock_seconds;
    }
  });
}

pprl_status pprl_agent_load(const char* checkpoint_path, pprl_agent** out) {
  if (pprl_status s = need(checkpoint_path && out, "pprl_agent_load: bad arguments"))
    return s;
  return guarded([&] {
    pprl::LoadedCheckpoint loaded = pprl::load_checkpoint(checkpoint_path);
    auto agent = std::make_unique<pprl_agent>();
    agent->config = std::move(loaded.config);
    agent->agent = std::move(loaded.agent);
    *out = agent.release();
  });
}

void pprl_agent_free(pprl_agent* agent) { delete agent; }

pprl_status pprl_eval(pprl_agent* agent, size_t episodes, uint64_t seed,
                      const char* dump_dir, pprl_eval_report* report) {
  if (pprl_status s = need(agent != nullptr, "pprl_eval: bad arguments")) return s;
  return guarded([&] {
    const std::string dump = dump_dir ? dump_dir : "";
    const pprl::EvalReport r =
        pprl::evaluate_agent(agent->agent, agent->config.env, episodes, seed,
                             dump.empty() ? nullptr : &dump);
    if (report) {
      report->episodes = r.episodes;
      report->mean_success = r.mean_success;
      report->success_lo = r.success_lo;
      report->success_hi = r.success_hi;
      report->mean_return = r.mean_return;
      report->return_lo = r.return_lo;
      report->return_hi = r.return_hi;
    }
  });
}

pprl_status pprl_reconstruct(pprl_agent* agent, const char* cloud_path,
                             const char* out_dir,
                             pprl_reconstruct_report* report) {
  if (pprl_status s = need(agent && cloud_path && out_dir,
                           "pprl_reconstruct: bad arguments"))
    return s;
  return guarded([&] {
    const pprl::PointCloud cloud = pprl::load_cloud(cloud_path);
    const pprl::ReconstructReport r =
        pprl::reconstruct_run(agent->agent, cloud, out_dir);
    if (report) {
      report->patches = r.patches;
      report->mean_chamfer = r.mean_chamfer;
      report->mean_color_loss = r.mean_color_loss;
    }
  });
}

pprl_status pprl_bench(const char* kernel, const size_t* sizes, size_t n_sizes,
                       char** out_csv) {
  if (pprl_status s =
          need(kernel && sizes && out_csv && n_sizes, "pprl_bench: bad arguments"))
    return s;
  return guarded([&] {
    const std::vector<size_t> sz(sizes, sizes + n_sizes);
    const std::string csv = pprl::bench_run(kernel, sz);
    char* buf = static_cast<char*>(std::malloc(csv.size() + 1));
    if (!buf) pprl::throw_io_error("pprl_bench: out of memory");
    std::memcpy(buf, csv.c_str(), csv.size() + 1);
    *out_csv = buf;
  });
}

void pprl_string_free(char* text) { std::free(text); }

}  // extern "C"
