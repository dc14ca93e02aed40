#ifndef QDT_H
#define QDT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QdtStatus {
    QDT_STATUS_OK = 0,
    QDT_STATUS_NULL_POINTER = 1,
    QDT_STATUS_INVALID_UTF8 = 2,
    QDT_STATUS_OUT_OF_RANGE = 3,
    QDT_STATUS_INVALID_DIMENSION = 10,
    QDT_STATUS_UNSUPPORTED_ORDERING = 11,
    QDT_STATUS_SYMMETRY_VIOLATION = 12,
    QDT_STATUS_SHAPE = 13,
    QDT_STATUS_NOT_FOUND = 14,
    QDT_STATUS_INVALID_AMPLITUDE = 15,
    QDT_STATUS_INVALID_DISTRIBUTION = 16,
    QDT_STATUS_INVALID_RECORD = 17,
    QDT_STATUS_NOT_IDENTIFIABLE = 18,
    QDT_STATUS_INVALID_KERNEL = 19,
    QDT_STATUS_MISSING_CONTEXT = 20,
    QDT_STATUS_INVALID_CONFIG = 21,
    QDT_STATUS_NOT_COMPUTABLE = 22,
    QDT_STATUS_NOT_APPLICABLE = 23,
    QDT_STATUS_CONVERGENCE_FAILURE = 24,
    QDT_STATUS_IO = 30,
    QDT_STATUS_PARSE = 31,
    QDT_STATUS_PANIC = 99,
} QdtStatus;

/**
 * Regression weighting for [`qdt_estimate`].
 */
typedef enum QdtWeighting {
    QDT_WEIGHTING_EMPIRICAL = 0,
    QDT_WEIGHTING_ORACLE = 1,
    QDT_WEIGHTING_UNIFORM = 2,
} QdtWeighting;

/**
 * Opaque detector (POVM).
 */
typedef struct QdtDetector QdtDetector;

/**
 * Opaque estimate: raw coefficients plus the corrected detector.
 */
typedef struct QdtEstimate QdtEstimate;

/**
 * Opaque probe set with its basis.
 */
typedef struct QdtProbes QdtProbes;

/**
 * Opaque count record.
 */
typedef struct QdtRecord QdtRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *qdt_last_error(void);

/**
 * Library version as a static string.
 */
const char *qdt_version(void);

/**
 * Built-in detector by name: `paper_d4`, `paper_d8(seed)`, `group_I`, `group_II`.
 *
 * # Safety
 * `name` must be a valid C string and `out` a valid pointer.
 */
enum QdtStatus qdt_detector_example(const char *name, uint64_t seed, struct QdtDetector **out);

/**
 * Detector from a JSON file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum QdtStatus qdt_detector_load(const char *path, struct QdtDetector **out);

/**
 * # Safety
 * `det` must come from this library and not be used afterwards.
 */
void qdt_detector_free(struct QdtDetector *det);

/**
 * Hilbert-space dimension and number of outcomes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum QdtStatus qdt_detector_shape(const struct QdtDetector *det,
                                  uintptr_t *dim,
                                  uintptr_t *outcomes);

/**
 * Copies element `index` row-major into `re` and `im`, each holding
 * `len >= dim * dim` doubles.
 *
 * # Safety
 * `re` and `im` must point to `len` writable doubles.
 */
enum QdtStatus qdt_detector_element(const struct QdtDetector *det,
                                    uintptr_t index,
                                    double *re,
                                    double *im,
                                    uintptr_t len);

/**
 * `count` Haar-random pure probes of dimension `dim` in the Gell-Mann basis.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QdtStatus qdt_probes_haar(uintptr_t dim,
                               uintptr_t count,
                               uint64_t seed,
                               struct QdtProbes **out);

/**
 * Number of probes and whether they are informationally complete.
 *
 * # Safety
 * All pointers must be valid.
 */
enum QdtStatus qdt_probes_info(const struct QdtProbes *probes, uintptr_t *count, bool *complete);

/**
 * # Safety
 * `probes` must come from this library and not be used afterwards.
 */
void qdt_probes_free(struct QdtProbes *probes);

/**
 * Samples counts for `total_shots` spread uniformly over the probes. The
 * draw is fixed by `(seed, trial)`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum QdtStatus qdt_simulate(const struct QdtDetector *det,
                            const struct QdtProbes *probes,
                            uint64_t total_shots,
                            uint64_t seed,
                            uint64_t trial,
                            struct QdtRecord **out);

/**
 * Count for outcome `i`, probe `j`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum QdtStatus qdt_record_count(const struct QdtRecord *rec,
                                uintptr_t i,
                                uintptr_t j,
                                uint64_t *out);

/**
 * # Safety
 * `rec` must come from this library and not be used afterwards.
 */
void qdt_record_free(struct QdtRecord *rec);

/**
 * Estimates and corrects a detector. `kernel_json` is a kernel object such
 * as `{"kind":"di","c":0.1,"mu":0.9}`; null means no regularization.
 * `truth` supplies oracle quantities and the score.
 *
 * # Safety
 * All non-optional pointers must be valid.
 */
enum QdtStatus qdt_estimate(const struct QdtProbes *probes,
                            const struct QdtRecord *rec,
                            const struct QdtDetector *truth,
                            const char *kernel_json,
                            enum QdtWeighting weighting,
                            struct QdtEstimate **out);

/**
 * `sum_i |P_hat_i - P_i|_F^2` of the corrected estimate.
 *
 * # Safety
 * All pointers must be valid.
 */
enum QdtStatus qdt_estimate_mse(const struct QdtEstimate *est, double *out);

/**
 * New detector handle holding the corrected estimate.
 *
 * # Safety
 * All pointers must be valid.
 */
enum QdtStatus qdt_estimate_detector(const struct QdtEstimate *est, struct QdtDetector **out);

/**
 * # Safety
 * `est` must come from this library and not be used afterwards.
 */
void qdt_estimate_free(struct QdtEstimate *est);

/**
 * Runs the full pipeline for a JSON config file, writing into `out_dir`.
 *
 * # Safety
 * Both strings must be valid C strings.
 */
enum QdtStatus qdt_run_config(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDT_H */
