/* Copyright 2026 The geopatch Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the geopatch library. Objects are opaque handles owned by
 * the caller and released with the matching *_free function. Every call
 * returns a gp_status; on failure gp_last_error() describes the problem for
 * the calling thread. Strings returned through char** are allocated by the
 * library and released with gp_string_free.
 */
#ifndef GEOPATCH_GEOPATCH_H_
#define GEOPATCH_GEOPATCH_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GP_API __declspec(dllexport)
#else
#define GP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gp_status {
  GP_OK = 0,
  GP_ERR_USAGE = 1,   /* bad arguments, options or configuration */
  GP_ERR_DATA = 2,    /* unreadable or invalid input data */
  GP_ERR_NUMERIC = 3  /* non-finite values, below-resolution renders */
} gp_status;

typedef struct gp_model gp_model;
typedef struct gp_sequence gp_sequence;
typedef struct gp_patch gp_patch;

typedef void (*gp_log_fn)(const char* line, void* user);

GP_API const char* gp_version(void);
/* Message of the last failed call on this thread; "" when none. */
GP_API const char* gp_last_error(void);
GP_API void gp_string_free(char* s);
/* Log sink for pipeline progress; NULL restores the default (stderr). */
GP_API void gp_set_log_callback(gp_log_fn fn, void* user);

/* ---- model */
GP_API gp_status gp_model_create(const char* config_json, gp_model** out);
GP_API gp_status gp_model_load(const char* path, gp_model** out);
GP_API gp_status gp_model_save(const gp_model* model, const char* path);
GP_API void gp_model_free(gp_model* model);
/* JSON: {"config": {...}, "param_count": n} */
GP_API gp_status gp_model_info(const gp_model* model, char** json_out);
/* pixels: S*S*3 floats in HWC order. probs may be NULL. */
GP_API gp_status gp_model_predict(const gp_model* model, const float* pixels, size_t count, int* label,
                                  double* probs, size_t probs_count);
GP_API gp_status gp_model_loss_and_input_grad(const gp_model* model, const float* pixels, size_t count, int label,
                                              double* loss, float* grad_out);

/* ---- sequences */
GP_API gp_status gp_sequence_load(const char* dir, gp_sequence** out);
GP_API void gp_sequence_free(gp_sequence* seq);
/* JSON: {"scene_id", "true_label", "frames": [{"name", "metadata"}...]} */
GP_API gp_status gp_sequence_info(const gp_sequence* seq, char** json_out);
GP_API gp_status gp_sequence_frame_pixels(const gp_sequence* seq, size_t frame, float* out, size_t count);

/* ---- patches */
GP_API gp_status gp_patch_create(size_t n, double element_size_m, float fill, gp_patch** out);
GP_API gp_status gp_patch_load(const char* path, gp_patch** out);
GP_API gp_status gp_patch_save(const gp_patch* patch, const char* path);
GP_API void gp_patch_free(gp_patch* patch);
/* JSON: {"n", "element_size_m", "side_m"} */
GP_API gp_status gp_patch_info(const gp_patch* patch, char** json_out);
GP_API gp_status gp_patch_pixel_count(const gp_patch* patch, double gsd_m_per_px, size_t chip_size, size_t* out);

/* ---- attacks. config_json holds an attack config object. */
GP_API gp_status gp_attack_sequence(const gp_model* model, const gp_sequence* seq, const char* config_json,
                                    gp_patch** patch_out, char** result_json);
GP_API gp_status gp_evaluate_attack(const gp_model* model, const gp_sequence* seq, const gp_patch* patch,
                                    const char* config_json, char** result_json);

/* ---- pipeline stages, options as JSON objects; summary JSON out. */
GP_API gp_status gp_run_synth_data(const char* options_json, char** summary_json);
GP_API gp_status gp_run_train(const char* options_json, char** summary_json);
GP_API gp_status gp_run_attack(const char* options_json, char** summary_json);
GP_API gp_status gp_run_evaluate(const char* options_json, char** summary_json);
GP_API gp_status gp_run_report(const char* options_json, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* GEOPATCH_GEOPATCH_H_ */
