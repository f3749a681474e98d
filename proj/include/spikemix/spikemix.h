/* C interface to the spikemix library: opaque handles and status codes. */
#ifndef SPIKEMIX_SPIKEMIX_H
#define SPIKEMIX_SPIKEMIX_H

#include <stddef.h>
#include <stdint.h>

#if defined(SPIKEMIX_BUILDING_LIBRARY)
#define SPK_API __attribute__((visibility("default")))
#else
#define SPK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum spk_status {
    SPK_OK = 0,
    SPK_ERR_INVALID_ARGUMENT = 1,
    SPK_ERR_SHAPE = 2,
    SPK_ERR_LENGTH = 3,
    SPK_ERR_FORMAT = 4,
    SPK_ERR_BAD_MAGIC = 5,
    SPK_ERR_TRUNCATED = 6,
    SPK_ERR_LABEL_OVERFLOW = 7,
    SPK_ERR_IO = 8,
    SPK_ERR_TAPE = 9,
    SPK_ERR_INTERNAL = 10
} spk_status;

typedef struct spk_model spk_model;
typedef struct spk_dataset spk_dataset;

typedef struct spk_epoch_info {
    uint32_t epoch;
    double loss;
    double train_acc;
    double eval_acc; /* NaN when the epoch was not evaluated */
    double lr;
    double ms_per_batch;
} spk_epoch_info;

typedef void (*spk_epoch_callback)(const spk_epoch_info* info, void* user);
typedef void (*spk_check_callback)(const char* suite, const char* name, int passed, const char* detail, void* user);
typedef void (*spk_log_callback)(const char* line, void* user);

SPK_API const char* spk_version(void);
/* Message of the last failed call on this thread ("" if none). */
SPK_API const char* spk_last_error(void);
SPK_API const char* spk_status_name(spk_status status);

/* Expands key=value text (later keys win) into the full resolved settings,
   one sorted key=value per line. Unknown keys and invalid values fail.
   Free *out with spk_string_free. */
SPK_API spk_status spk_config_resolve(const char* config_text, char** out);
SPK_API void spk_string_free(char* s);

/* task: bars | checker | moving_dot. timesteps is used by moving_dot only. */
SPK_API spk_status spk_dataset_generate(const char* task, size_t n_samples, size_t channels, size_t height,
                                        size_t width, size_t timesteps, uint64_t seed, spk_dataset** out);
SPK_API spk_status spk_dataset_load(const char* path, spk_dataset** out);
SPK_API spk_status spk_dataset_save(const spk_dataset* ds, const char* path);
SPK_API size_t spk_dataset_size(const spk_dataset* ds);
SPK_API void spk_dataset_free(spk_dataset* ds);

/* Builds a freshly initialized model from config text (key "seed" seeds
   the initialization). */
SPK_API spk_status spk_model_create(const char* config_text, spk_model** out);
SPK_API spk_status spk_model_load(const char* path, spk_model** out);
SPK_API spk_status spk_model_save(spk_model* model, const char* path);
SPK_API spk_status spk_model_param_count(spk_model* model, size_t* total, size_t* weights);
/* Model settings as key=value text; free with spk_string_free. */
SPK_API spk_status spk_model_config(const spk_model* model, char** out);
SPK_API void spk_model_free(spk_model* model);

/* Trains with the train keys of config_text. metrics_path may be NULL;
   callback may be NULL. final_acc receives the last test accuracy. */
SPK_API spk_status spk_train(spk_model* model, const spk_dataset* train, const spk_dataset* test,
                             const char* config_text, const char* metrics_path, spk_epoch_callback callback,
                             void* user, double* final_acc);
SPK_API spk_status spk_evaluate(spk_model* model, const spk_dataset* data, size_t batch, double* top1);

/* Runs the benchmark described by the bench keys of config_text; csv_path
   may be NULL. */
SPK_API spk_status spk_bench_run(const char* config_text, const char* report_path, const char* csv_path,
                                 spk_log_callback log, void* user);

/* suites: comma-separated names or NULL for all. */
SPK_API spk_status spk_verify_run(const char* suites, spk_check_callback callback, void* user, size_t* passed,
                                  size_t* failed);

#ifdef __cplusplus
}
#endif

#endif
