#ifndef LAYERFORGE_H
#define LAYERFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. 1-3 match the CLI exit codes.
 */
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_DATA = 1,
  LF_STATUS_FORMAT = 2,
  LF_STATUS_USAGE = 3,
  LF_STATUS_NULL_POINTER = 4,
  LF_STATUS_PANIC = 5,
  LF_STATUS_IO = 6,
} LfStatus;

/**
 * A loaded, validated corpus.
 */
typedef struct LfCorpus LfCorpus;

/**
 * A fitted ridge model.
 */
typedef struct LfRidge LfRidge;

/**
 * Result of a greedy layer selection.
 */
typedef struct LfTrace LfTrace;

typedef struct LfCvResult {
  double mean_mse;
  double std_err;
  double alpha_star;
} LfCvResult;

typedef struct LfSelectOptions {
  size_t max_layers;
  double epsilon;
  size_t k;
  uint64_t seed;
  bool standardize;
} LfSelectOptions;

typedef struct LfTTest {
  double t;
  size_t df;
  double p_two_sided;
  double mean_diff;
  bool degenerate;
} LfTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lf_version(void);

/**
 * Load and validate a corpus. `min_words` is inclusive.
 */
enum LfStatus lf_corpus_load(const char *embeddings_path,
                             const char *outcomes_path,
                             uint64_t min_words,
                             struct LfCorpus **out);

void lf_corpus_free(struct LfCorpus *corpus);

/**
 * Number of users; 0 for a null handle.
 */
size_t lf_corpus_num_users(const struct LfCorpus *corpus);

size_t lf_corpus_num_layers(const struct LfCorpus *corpus);

size_t lf_corpus_hidden_dim(const struct LfCorpus *corpus);

/**
 * The `i`-th user id in sorted order, owned by the handle; null when out
 * of range.
 */
const char *lf_corpus_user_id(const struct LfCorpus *corpus, size_t i);

/**
 * Cross-validate one layer set. Pass `n_alphas = 0` for the default grid.
 */
enum LfStatus lf_cross_validate(const struct LfCorpus *corpus,
                                const size_t *layers,
                                size_t n_layers,
                                size_t k,
                                uint64_t seed,
                                const double *alphas,
                                size_t n_alphas,
                                bool standardize,
                                struct LfCvResult *out);

/**
 * Default selection options.
 */
struct LfSelectOptions lf_select_options_default(void);

/**
 * Greedy forward layer selection over the default α grid. `options` may
 * be null for defaults.
 */
enum LfStatus lf_greedy_select(const struct LfCorpus *corpus,
                               const struct LfSelectOptions *options,
                               struct LfTrace **out);

void lf_trace_free(struct LfTrace *trace);

/**
 * Size of the recommended layer set.
 */
size_t lf_trace_num_recommended(const struct LfTrace *trace);

/**
 * Copy up to `cap` recommended layers, in selection order, into `out`.
 * Returns the full count.
 */
size_t lf_trace_recommended(const struct LfTrace *trace, size_t *out, size_t cap);

double lf_trace_mean_mse(const struct LfTrace *trace);

double lf_trace_alpha(const struct LfTrace *trace);

size_t lf_trace_num_stages(const struct LfTrace *trace);

/**
 * The full trace as CSV, owned by the handle.
 */
const char *lf_trace_csv(const struct LfTrace *trace);

/**
 * Fit ridge on a row-major `n x p` matrix.
 */
enum LfStatus lf_ridge_fit(const double *x,
                           size_t n,
                           size_t p,
                           const double *y,
                           double alpha,
                           bool standardize,
                           struct LfRidge **out);

/**
 * Predict for a row-major `n x p` matrix into `out[0..n]`.
 */
enum LfStatus lf_ridge_predict(const struct LfRidge *model,
                               const double *x,
                               size_t n,
                               size_t p,
                               double *out);

double lf_ridge_alpha(const struct LfRidge *model);

void lf_ridge_free(struct LfRidge *model);

enum LfStatus lf_pearson_r(const double *x, const double *y, size_t n, double *out);

/**
 * Two-sided paired t-test of `a - b`.
 */
enum LfStatus lf_paired_t_test(const double *a, const double *b, size_t n, struct LfTTest *out);

/**
 * Correct a correlation for measurement unreliability.
 */
enum LfStatus lf_disattenuate(double r, double rel_x, double rel_y, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYERFORGE_H */
