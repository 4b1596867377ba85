#ifndef FRN_FRN_H
#define FRN_FRN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FRN_API __declspec(dllexport)
#else
#define FRN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum frn_status {
  FRN_OK = 0,
  FRN_ERR_DIMENSION = 1,
  FRN_ERR_CONTRACT = 2,
  FRN_ERR_FORMAT = 3,
  FRN_ERR_TRUNCATED = 4,
  FRN_ERR_OVERFLOW = 5,
  FRN_ERR_CONFIG = 6,
  FRN_ERR_DATA = 7,
  FRN_ERR_NUMERIC = 8,
  FRN_ERR_IO = 9,
  FRN_ERR_ARGUMENT = 10, /* null handle or pointer */
  FRN_ERR_INTERNAL = 11
} frn_status;

/** Message of the last failing call on this thread; never NULL. */
FRN_API const char* frn_last_error(void);
FRN_API const char* frn_status_name(frn_status status);
/** Process exit code for a status: 0 ok, 2 config, 3 data, 4 numeric. */
FRN_API int frn_exit_code(frn_status status);
FRN_API const char* frn_version(void);

/* Spectral cubes: band-major float32 volumes. */
typedef struct frn_cube frn_cube;

/** Copies bands*height*width floats; data may be NULL for zeros. */
FRN_API frn_status frn_cube_create(uint32_t bands, uint32_t height, uint32_t width, const float* data,
                                   frn_cube** out);
FRN_API frn_status frn_cube_load(const char* path, frn_cube** out);
FRN_API frn_status frn_cube_save(const frn_cube* cube, const char* path);
FRN_API frn_status frn_cube_shape(const frn_cube* cube, uint32_t* bands, uint32_t* height, uint32_t* width);
/** Borrowed pointer valid until the cube is freed. */
FRN_API const float* frn_cube_data(const frn_cube* cube);
FRN_API void frn_cube_free(frn_cube* cube);

/** Synthetic scene mixed from `endmembers` smooth signatures. */
FRN_API frn_status frn_synth_scene(uint32_t bands, uint32_t size, uint32_t endmembers, uint64_t seed,
                                   frn_cube** out);
/** RGB image of a cube under the default Gaussian camera response. */
FRN_API frn_status frn_project_rgb(const frn_cube* cube, frn_cube** rgb_out);
/** Least-squares cube from RGB under the default Gaussian camera response. */
FRN_API frn_status frn_pinv_upsample(const frn_cube* rgb, uint32_t bands, frn_cube** out);

/* Metrics. Predictions are clamped to [0, 1]. */
typedef struct frn_metrics {
  double psnr_db;
  double rmse_255;
  double ssim;
  double uiqi;
} frn_metrics;

FRN_API frn_status frn_evaluate(const frn_cube* pred, const frn_cube* gt, frn_metrics* out);

/* Models. */
typedef struct frn_model frn_model;

/** Fresh model from an experiment config document (JSON, may be "{}"). */
FRN_API frn_status frn_model_create(const char* config_json, frn_model** out);
/** Model restored from a checkpoint written by frn_cmd_train. */
FRN_API frn_status frn_model_load(const char* checkpoint_path, frn_model** out);
FRN_API frn_status frn_model_param_count(const frn_model* model, uint64_t* out);
/** Tiled inference of an RGB cube (3 bands). */
FRN_API frn_status frn_model_predict(const frn_model* model, const frn_cube* rgb, frn_cube** out);
FRN_API void frn_model_free(frn_model* model);

/* Commands. Each takes a JSON argument document and, on success, stores a
   JSON result in *result_json, released with frn_string_free. */
typedef void (*frn_log_fn)(const char* line, void* user);

/** Progress lines from commands; NULL silences them. Process-wide. */
FRN_API void frn_set_log_callback(frn_log_fn fn, void* user);

/** {"scenes","bands","size","seed","endmembers","out"} */
FRN_API frn_status frn_cmd_synth(const char* args_json, char** result_json);
/** {"config": path or "", "overrides": {"train.levels": "1", ...}} */
FRN_API frn_status frn_cmd_train(const char* args_json, char** result_json);
/** {"checkpoint","data","out","holdout","tile","overlap","per_band","probes"} */
FRN_API frn_status frn_cmd_eval(const char* args_json, char** result_json);
/** {"axis","values":[...],"config","overrides"} */
FRN_API frn_status frn_cmd_ablate(const char* args_json, char** result_json);
/** Merged experiment config for {"config","overrides"} without running it. */
FRN_API frn_status frn_config_resolve(const char* args_json, char** result_json);
FRN_API void frn_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
