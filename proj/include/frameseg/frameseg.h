#ifndef FRAMESEG_FRAMESEG_H
#define FRAMESEG_FRAMESEG_H

/*
 * C interface to the frameseg library.
 *
 * Every call returns an fseg_status. On failure a message naming the offending
 * file or record is available from fseg_last_error() on the calling thread
 * until the next call. Strings handed out through char** parameters are owned
 * by the caller and released with fseg_string_free().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(FSEG_BUILDING_LIBRARY)
#define FSEG_API __attribute__((visibility("default")))
#else
#define FSEG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fseg_status {
  FSEG_OK = 0,
  FSEG_ERR_FORMAT = 1,
  FSEG_ERR_TRUNCATION = 2,
  FSEG_ERR_CONSISTENCY = 3,
  FSEG_ERR_IO = 4,
  FSEG_ERR_INVALID_ARGUMENT = 5,
  FSEG_ERR_PRECONDITION = 6,
  FSEG_ERR_MISMATCH = 7,
  FSEG_ERR_INTERNAL = 8
} fseg_status;

typedef enum fseg_labels { FSEG_LABELS_PSEUDO = 0, FSEG_LABELS_REAL = 1 } fseg_labels;

typedef struct fseg_config fseg_config;
typedef struct fseg_checkpoint fseg_checkpoint;

FSEG_API const char* fseg_version(void);
FSEG_API const char* fseg_last_error(void);
FSEG_API const char* fseg_status_name(fseg_status status);
/* Process exit code for a status: 0 ok, 1 validation failure, 2 bad input or config, 3 internal. */
FSEG_API int fseg_exit_code(fseg_status status);
FSEG_API void fseg_string_free(char* s);

/* Run configuration. */
FSEG_API fseg_status fseg_config_default(fseg_config** out);
FSEG_API fseg_status fseg_config_load(const char* path, fseg_config** out);
/* Applies a JSON merge patch, e.g. {"distill":{"epochs":5}}. */
FSEG_API fseg_status fseg_config_merge(fseg_config* cfg, const char* json_patch);
FSEG_API fseg_status fseg_config_to_json(const fseg_config* cfg, char** out_json);
FSEG_API void fseg_config_free(fseg_config* cfg);

/* Pipeline stages. Each writes its artifacts and returns a JSON summary. */
FSEG_API fseg_status fseg_synth(const fseg_config* cfg, const char* out_dir, char** out_json);
FSEG_API fseg_status fseg_pair(const fseg_config* cfg, const char* data_dir, const char* out_manifest,
                               char** out_json);
FSEG_API fseg_status fseg_split(const char* manifest, const char* out_dir, double train, double val, double test,
                                char** out_json);
FSEG_API fseg_status fseg_project(const char* manifest, const char* rig, const char* out_dir, size_t limit,
                                  char** out_json);
/* label_map and out_manifest may be NULL (builtin structural map, update in place). */
FSEG_API fseg_status fseg_pseudolabel(const fseg_config* cfg, const char* manifest, const char* rig,
                                      const char* label_map, int depth_filter, const char* out_manifest,
                                      char** out_json);
FSEG_API fseg_status fseg_distill(const fseg_config* cfg, const char* manifest, const char* rig,
                                  const char* out_ckpt, char** out_json);
FSEG_API fseg_status fseg_probe(const fseg_config* cfg, const char* ckpt, const char* manifest, fseg_labels labels,
                                const char* out_ckpt, char** out_json);
FSEG_API fseg_status fseg_finetune(const fseg_config* cfg, const char* ckpt, const char* manifest,
                                   fseg_labels labels, const char* out_ckpt, char** out_json);
/* out_prefix may be NULL; any of the out strings may be NULL when not wanted. */
FSEG_API fseg_status fseg_eval(const fseg_config* cfg, const char* ckpt, const char* manifest, fseg_labels labels,
                               const char* out_prefix, char** out_text, char** out_csv, char** out_json);
FSEG_API fseg_status fseg_bench(const fseg_config* cfg, const uint32_t* depths, size_t n_depths, uint32_t frames,
                                uint32_t repeats, const char* out_prefix, char** out_text, char** out_csv,
                                char** out_json);

/* Checkpoints and lidar-only inference. */
FSEG_API fseg_status fseg_checkpoint_load(const char* path, fseg_checkpoint** out);
FSEG_API fseg_status fseg_checkpoint_info(const fseg_checkpoint* ckpt, char** out_json);
FSEG_API void fseg_checkpoint_free(fseg_checkpoint* ckpt);
/* points: n x 4 floats (x, y, z, intensity); labels: n entries. */
FSEG_API fseg_status fseg_predict(const fseg_checkpoint* ckpt, const float* points, size_t n_points,
                                  uint16_t* labels);

#ifdef __cplusplus
}
#endif

#endif
