#ifndef TRUST_TRUST_H
#define TRUST_TRUST_H

#include <stddef.h>
#include <stdint.h>

#if defined(TRUST_BUILDING_LIBRARY)
#define TRUST_API __attribute__((visibility("default")))
#else
#define TRUST_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum trust_status {
  TRUST_OK = 0,
  TRUST_ERROR_DIMENSION = 1,
  TRUST_ERROR_PARAMETER = 2,
  TRUST_ERROR_CONTRACT = 3,
  TRUST_ERROR_IO = 4,
  TRUST_ERROR_NUMERIC = 5,
  TRUST_ERROR_SINGULAR = 6,
  TRUST_ERROR_REFUSED = 7,
  TRUST_ERROR_INTERNAL = 8
} trust_status;

/* Library version, e.g. "0.1.0". */
TRUST_API const char* trust_version(void);
/* Message of the last failed call on this thread; empty after a success. */
TRUST_API const char* trust_last_error(void);
/* Frees strings returned through char** out-parameters. NULL is ignored. */
TRUST_API void trust_string_free(char* s);

/* ---- sensing operators ---- */

typedef struct trust_operator trust_operator;

/* kind: identity|orthonormal|tall|gaussian|fourier. options_json may be NULL or
   {"column_normalized": bool, "keep_fraction": double}. */
TRUST_API trust_status trust_operator_sample(const char* kind, size_t m, size_t n, uint64_t seed,
                                             const char* options_json, trust_operator** out);
TRUST_API trust_status trust_operator_load(const char* path, trust_operator** out);
TRUST_API trust_status trust_operator_save(const trust_operator* op, const char* path);
TRUST_API void trust_operator_free(trust_operator* op);
TRUST_API trust_status trust_operator_shape(const trust_operator* op, size_t* m, size_t* n);
/* y = A x + w with w drawn from the operator's noise stream at noise_index. */
TRUST_API trust_status trust_operator_apply(const trust_operator* op, const double* x, size_t n,
                                            double noise_sigma, uint64_t noise_index, double* y, size_t m);
TRUST_API trust_status trust_operator_adjoint(const trust_operator* op, const double* r, size_t m, double* out,
                                              size_t n);
/* method: exact|montecarlo. Result JSON {order, delta, method, evaluated, lower_bound}. */
TRUST_API trust_status trust_operator_rip(const trust_operator* op, size_t k, const char* method, size_t budget,
                                          uint64_t seed, char** json_out);

/* ---- sparse recovery ---- */

/* config_json: {"method": "omp"|"ista"|"fista", "max_iterations", "residual_tolerance",
   "sparsity", "lambda", "change_tolerance", "seed"}. info_json_out may be NULL. */
TRUST_API trust_status trust_solve(const trust_operator* op, const double* y, size_t m, const char* config_json,
                                   double* x_out, size_t n, char** info_json_out);

/* Recovers every pair of a dataset split. config_json adds "operator": "known"|"estimated",
   "split" (default test) and "ridge". Writes reconstructions.bin and metrics files to out_dir
   and returns the metric report JSON and the per-image CSV. */
TRUST_API trust_status trust_solve_dataset(const char* dataset_dir, const char* config_json, const char* out_dir,
                                           char** report_json_out, char** per_image_csv_out);

/* ---- attention bound lab ---- */

/* config_json: {"grid": "MxNxK,...", "kinds": [...], "trials", "seed", "column_normalized",
   "enumeration_cap", "monte_carlo_budget"}. *violation is 1 when an exact-delta cell fails. */
TRUST_API trust_status trust_verify_bound(const char* config_json, char** csv_out, int* violation);

/* ---- metrics ---- */

/* Metrics of one h x w image pair: {"mse","mae","rmse","psnr","ssim","fpr"}. */
TRUST_API trust_status trust_metrics(const double* xhat, const double* x, size_t h, size_t w, char** json_out);

/* ---- datasets ---- */

/* Generates a dataset into dir from a spec JSON (NULL or "{}" for defaults). */
TRUST_API trust_status trust_dataset_generate(const char* spec_json, const char* dir, char** manifest_json_out);
/* Reads and returns manifest.json after verifying every split checksum. */
TRUST_API trust_status trust_dataset_verify(const char* dir, char** manifest_json_out);

/* ---- models ---- */

typedef struct trust_model trust_model;
/* Called after every epoch with one epoch-log CSV row (newline-terminated). */
typedef void (*trust_epoch_callback)(const char* csv_row, void* user);

/* spec_json: {"kind": "trust"|"unet", "trust": {...}, "unet": {...}}; freshly initialized. */
TRUST_API trust_status trust_model_create(const char* spec_json, trust_model** out);
TRUST_API trust_status trust_model_load(const char* checkpoint_path, trust_model** out);
TRUST_API trust_status trust_model_save(const trust_model* model, const char* checkpoint_path);
TRUST_API void trust_model_free(trust_model* model);
TRUST_API trust_status trust_model_spec(const trust_model* model, char** json_out);
TRUST_API trust_status trust_model_param_count(const char* spec_json, size_t* parameters, size_t* multiply_adds);
/* observation: observation_size^2 values; out: image_size^2 values. */
TRUST_API trust_status trust_model_forward(const trust_model* model, const double* observation, size_t len,
                                           double* out, size_t out_len);
/* Trains from the model's current parameters on the dataset's train split, validating on val.
   Writes best.ckpt, last.ckpt and epochs.csv to out_dir; the handle ends at the last epoch. */
TRUST_API trust_status trust_model_train(trust_model* model, const char* dataset_dir, const char* train_json,
                                         const char* out_dir, trust_epoch_callback on_epoch, void* user,
                                         char** epoch_log_csv_out);
/* options_json: {"split", "loss", "lambda_l1", "lambda_ssim", "emit_images": dir}. */
TRUST_API trust_status trust_model_evaluate(const trust_model* model, const char* dataset_dir,
                                            const char* options_json, char** report_json_out,
                                            char** per_image_csv_out);

/* ---- provenance and reporting ---- */

/* Git-style hash over the config JSON and the listed files or directories. */
TRUST_API trust_status trust_hash_inputs(const char* config_json, const char* const* paths, size_t count,
                                         char** hash_out);
/* Comparison table over run directories; *rows is the number of runs with metrics. */
TRUST_API trust_status trust_report_runs(const char* runs_dir, char** markdown_out, char** csv_out, size_t* rows);

#ifdef __cplusplus
}
#endif

#endif
