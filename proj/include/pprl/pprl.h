/* PPRL C API: point-cloud patch tokenization, masked reconstruction and
 * soft actor-critic training behind a shared library.
 *
 * Every function returns a pprl_status; on failure pprl_last_error() holds a
 * thread-local description. Objects returned through out-parameters are
 * owned by the caller and released with the matching *_free function.
 */
#ifndef PPRL_H
#define PPRL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pprl_status {
  PPRL_OK = 0,
  PPRL_ERR_INVALID_ARGUMENT = 1,
  PPRL_ERR_INVALID_STATE = 2,
  PPRL_ERR_DEGENERATE_INPUT = 3,
  PPRL_ERR_CONFIG = 4,
  PPRL_ERR_PARSE = 5,
  PPRL_ERR_IO = 6,
  PPRL_ERR_INTERNAL = 7
} pprl_status;

const char* pprl_status_name(pprl_status status);
const char* pprl_last_error(void);
const char* pprl_version(void);

/* ---- point clouds ---- */

typedef struct pprl_cloud pprl_cloud;

/* rgb may be NULL for plain xyz clouds; both arrays are length 3*n. */
pprl_status pprl_cloud_create(const double* xyz, const double* rgb, size_t n,
                              pprl_cloud** out);
/* ASCII format: `x y z [r g b]` per line, `#` comments. */
pprl_status pprl_cloud_load(const char* path, pprl_cloud** out);
pprl_status pprl_cloud_save(const pprl_cloud* cloud, const char* path);
size_t pprl_cloud_size(const pprl_cloud* cloud);
int pprl_cloud_has_colors(const pprl_cloud* cloud);
/* Copies 3*n doubles into the caller's buffer. */
pprl_status pprl_cloud_positions(const pprl_cloud* cloud, double* out);
pprl_status pprl_cloud_colors(const pprl_cloud* cloud, double* out);
void pprl_cloud_free(pprl_cloud* cloud);

/* ---- geometry kernels ---- */

/* out_indices must hold n entries. */
pprl_status pprl_fps(const pprl_cloud* cloud, size_t n, uint64_t seed,
                     size_t* out_indices);
/* out_indices must hold n_centroids*k entries (patch-major). */
pprl_status pprl_knn_group(const pprl_cloud* cloud,
                           const size_t* centroid_indices, size_t n_centroids,
                           size_t k, size_t* out_indices);
/* out_order must hold pprl_cloud_size(cloud) entries. */
pprl_status pprl_morton_rank(const pprl_cloud* cloud, size_t* out_order);
pprl_status pprl_voxel_downsample(const pprl_cloud* cloud, double voxel_size,
                                  pprl_cloud** out);
/* Symmetric squared-L2 Chamfer distance between two clouds. */
pprl_status pprl_chamfer(const pprl_cloud* a, const pprl_cloud* b, double* out);

/* ---- configuration ---- */

typedef struct pprl_run_config pprl_run_config;

pprl_status pprl_config_load(const char* path, pprl_run_config** out);
void pprl_config_free(pprl_run_config* config);

/* ---- training ---- */

typedef struct pprl_train_report {
  uint64_t steps_run;
  uint64_t episodes;
  double final_eval_success;
  double best_eval_success;
  uint64_t steps_to_stop; /* 0 when the stop threshold was never reached */
  int stopped_early;
  double wallclock_seconds;
} pprl_train_report;

/* resume_checkpoint may be NULL. Outputs land in the config's out_dir. */
pprl_status pprl_train(const pprl_run_config* config,
                       const char* resume_checkpoint, pprl_train_report* report);

/* ---- agents (loaded checkpoints) ---- */

typedef struct pprl_agent pprl_agent;

pprl_status pprl_agent_load(const char* checkpoint_path, pprl_agent** out);
void pprl_agent_free(pprl_agent* agent);

typedef struct pprl_eval_report {
  size_t episodes;
  double mean_success;
  double success_lo, success_hi; /* 95% bootstrap CI */
  double mean_return;
  double return_lo, return_hi;
} pprl_eval_report;

/* dump_dir may be NULL; otherwise every observation is written there. */
pprl_status pprl_eval(pprl_agent* agent, size_t episodes, uint64_t seed,
                      const char* dump_dir, pprl_eval_report* report);

typedef struct pprl_reconstruct_report {
  size_t patches;
  double mean_chamfer;
  double mean_color_loss; /* -1 when colors are disabled */
} pprl_reconstruct_report;

pprl_status pprl_reconstruct(pprl_agent* agent, const char* cloud_path,
                             const char* out_dir,
                             pprl_reconstruct_report* report);

/* ---- benchmarks ---- */

/* kernel: fps|knn|morton|chamfer|voxel. *out_csv is malloc'd; release with
 * pprl_string_free. */
pprl_status pprl_bench(const char* kernel, const size_t* sizes, size_t n_sizes,
                       char** out_csv);
void pprl_string_free(char* text);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PPRL_H */
