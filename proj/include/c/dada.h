#ifndef DADA_H
#define DADA_H

#include <stddef.h>
#include <stdint.h>

#if defined(DADA_BUILDING_LIBRARY)
#define DADA_API __attribute__((visibility("default")))
#else
#define DADA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes for the CLI. */
typedef enum dada_status {
    DADA_OK = 0,
    DADA_ERR_INTERNAL = 1,
    DADA_ERR_CONFIG = 2,
    DADA_ERR_DATA = 3,
    DADA_ERR_NUMERIC = 4,
    DADA_ERR_INVALID_ARGUMENT = 5
} dada_status;

/* Message of the last failure on the calling thread; never NULL. */
DADA_API const char* dada_last_error(void);
DADA_API const char* dada_version(void);

typedef void (*dada_log_fn)(const char* message, void* user);
/* Progress messages from long-running calls. NULL disables. */
DADA_API void dada_set_log_callback(dada_log_fn fn, void* user);

/* spec_path may be NULL for the default 64x64, 7-class spec. */
DADA_API dada_status dada_generate_dataset(const char* spec_path, const char* domain, uint64_t seed, uint64_t count,
                                           const char* out_dir);

typedef struct dada_train_options {
    const char* model_cfg;   /* NULL: defaults */
    const char* train_cfg;   /* NULL: defaults */
    const char* ablation;    /* "S1".."S7" */
    const char* source_dir;
    const char* target_dir;
    const char* val_dir;     /* NULL: snapshots carry losses only */
    const char* out_dir;
    const char* resume_from; /* NULL: fresh run */
    int64_t stop_after;      /* < 0: run to the configured iteration count */
    int deterministic;       /* also forced by DADA_DETERMINISTIC=1 */
    int verify_isolation;
} dada_train_options;

DADA_API void dada_train_options_init(dada_train_options* opts);
DADA_API dada_status dada_train(const dada_train_options* opts);

/* baseline_report and subset ("0,3,5") may be NULL. */
DADA_API dada_status dada_evaluate(const char* checkpoint, const char* data_dir, const char* baseline_report,
                                   const char* subset, const char* out_path);

typedef struct dada_ablate_options {
    const char* model_cfg;
    const char* train_cfg;
    const char* setups;          /* "S1,S2,S7"; NULL: all seven */
    const uint64_t* seeds;       /* explicit seed list, or NULL with num_seeds k for seeds 0..k-1 */
    size_t num_seeds;
    const char* source_dir;
    const char* target_dir;
    const char* val_dir;
    const char* out_dir;
    const char* fractions;       /* "0.1,1"; NULL: no sweep */
    const char* fraction_setup;  /* NULL: "S7" */
    const char* subset;          /* NULL: no class subset */
    int jobs;
    int deterministic;
    int verify_isolation;
} dada_ablate_options;

DADA_API void dada_ablate_options_init(dada_ablate_options* opts);
DADA_API dada_status dada_ablate(const dada_ablate_options* opts);

/* Re-aggregates tables, plots and summary.json of an ablate output directory. */
DADA_API dada_status dada_report(const char* dir);

typedef struct dada_model dada_model;

DADA_API dada_status dada_model_load(const char* checkpoint, dada_model** out);
DADA_API void dada_model_free(dada_model* model);
DADA_API dada_status dada_model_info(const dada_model* model, int* num_classes, int* height, int* width);
/* image: H*W*3 interleaved RGB in [0,1]. labels: H*W. probs (C*H*W, channel-major) may be NULL. */
DADA_API dada_status dada_model_predict(const dada_model* model, const float* image, size_t image_len, uint8_t* labels,
                                        float* probs);

#ifdef __cplusplus
}
#endif

#endif
