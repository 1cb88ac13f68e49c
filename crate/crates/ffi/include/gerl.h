#ifndef GERL_H
#define GERL_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call.
 */
typedef enum GerlStatus {
  GERL_STATUS_OK = 0,
  /**
   * Null pointer, non-UTF-8 string, or unknown name.
   */
  GERL_STATUS_INVALID_ARGUMENT = 1,
  GERL_STATUS_IO = 2,
  GERL_STATUS_PARSE = 3,
  GERL_STATUS_CONFIG = 4,
  GERL_STATUS_RUNTIME = 5,
} GerlStatus;

/**
 * Opaque: a prepared corpus (vocabulary, splits, click graph,
 * neighbor tables) plus trained parameters.
 */
typedef struct GerlModel GerlModel;

/**
 * Evaluation metrics averaged over scored impressions.
 */
typedef struct GerlMetrics {
  double auc;
  double mrr;
  double ndcg5;
  double ndcg10;
  uint64_t n_impressions;
  uint64_t n_skipped;
} GerlMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version string (static, do not free).
 */
const char *gerl_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated
 * to `cap − 1` bytes, NUL-terminated) and returns the full message
 * length in bytes. A `cap` of 0 only queries the length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes (or be NULL).
 */
size_t gerl_last_error(char *buf, size_t cap);

/**
 * Trains a model on `news`/`behaviors` TSVs, writes the checkpoint
 * into `out_dir`, and returns a handle to the trained model.
 * `config_json` may be NULL (defaults) or a JSON object with any
 * subset of the run-configuration fields.
 *
 * # Safety
 * `handle_out` must be a valid pointer; every string must be a valid
 * NUL-terminated C string (the config may be NULL).
 */
enum GerlStatus gerl_train(const char *news_path,
                           const char *behaviors_path,
                           const char *out_dir,
                           const char *config_json,
                           uint64_t seed,
                           struct GerlModel **handle_out);

/**
 * Opens a previously trained run directory against the same corpus
 * files it was trained on.
 *
 * # Safety
 * `handle_out` must be a valid pointer; every string must be a valid
 * NUL-terminated C string.
 */
enum GerlStatus gerl_open(const char *run_dir,
                          const char *news_path,
                          const char *behaviors_path,
                          struct GerlModel **handle_out);

/**
 * Ranking score for one (user, click history, candidate news) triple.
 * Unknown users fall back to the cold-start representation; unknown
 * news ids are errors.
 *
 * # Safety
 * `history_ids` must point to `n_history` valid C strings.
 */
enum GerlStatus gerl_score(const struct GerlModel *handle,
                           const char *user_id,
                           const char *const *history_ids,
                           size_t n_history,
                           const char *news_id,
                           double *score_out);

/**
 * Evaluates the model on one split ("train", "val", or "test") of the
 * corpus it was opened with.
 *
 * # Safety
 * `handle` must come from `gerl_train`/`gerl_open` (or be NULL);
 * `metrics_out` must be a valid pointer.
 */
enum GerlStatus gerl_evaluate(const struct GerlModel *handle,
                              const char *split,
                              struct GerlMetrics *metrics_out);

/**
 * Dumps the neighbor tables of the model's click graph as TSV into
 * the given file (the same format as the CLI `graph` command).
 *
 * # Safety
 * `handle` must come from `gerl_train`/`gerl_open` (or be NULL).
 */
enum GerlStatus gerl_dump_neighbors(const struct GerlModel *handle, const char *out_path);

/**
 * Releases a model handle. NULL is a no-op.
 *
 * # Safety
 * `handle` must come from `gerl_train`/`gerl_open` and not be freed
 * twice; NULL is a no-op.
 */
void gerl_model_free(struct GerlModel *handle);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* GERL_H */
