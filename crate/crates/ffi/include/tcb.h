#ifndef TCB_H
#define TCB_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TcbStatus {
  TCB_STATUS_OK = 0,
  TCB_STATUS_NULL_POINTER = 1,
  TCB_STATUS_VALIDATION = 2,
  TCB_STATUS_SHAPE = 3,
  TCB_STATUS_PARSE = 4,
  TCB_STATUS_INVALID_UTF8 = 5,
  TCB_STATUS_IO = 6,
  TCB_STATUS_INTERNAL = 7,
} TcbStatus;

typedef enum TcbDimension {
  TCB_DIMENSION_COMPLETION = 0,
  TCB_DIMENSION_CONSISTENCY = 1,
  TCB_DIMENSION_OTHER = 2,
} TcbDimension;

typedef enum TcbManifestKind {
  TCB_MANIFEST_KIND_T2V = 0,
  TCB_MANIFEST_KIND_I2V = 1,
} TcbManifestKind;

typedef enum TcbCategory {
  TCB_CATEGORY_ATTRIBUTE = 0,
  TCB_CATEGORY_OBJECT_RELATION = 1,
  TCB_CATEGORY_BACKGROUND = 2,
} TcbCategory;

/**
 * Parsed assertion set.
 */
typedef struct TcbAssertionSet TcbAssertionSet;

/**
 * Loaded and validated benchmark corpus.
 */
typedef struct TcbCorpus TcbCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *tcb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tcb_version(void);

/**
 * Clamped linear map of a cosine similarity from [0.90, 0.98] onto [0, 1].
 */
double tcb_map_similarity(double s);

/**
 * `w1 * pass_rate + w2 * mean_mapped`; weights must be non-negative and sum to 1.
 */
enum TcbStatus tcb_tc_score_i2v(double pass_rate,
                                double mean_mapped,
                                double w1,
                                double w2,
                                double *result);

/**
 * Percentage of ones among `n` per-video completion flags (each 0 or 1).
 */
enum TcbStatus tcb_compute_tcr(const uint8_t *tcs, size_t n, double *result);

/**
 * Endpoint error between `frames` flow fields of `width * height` pixels.
 * Each array holds `frames` consecutive row-major planes.
 */
enum TcbStatus tcb_epe(const float *u,
                       const float *v,
                       const float *ref_u,
                       const float *ref_v,
                       uint32_t width,
                       uint32_t height,
                       size_t frames,
                       double *result);

/**
 * Average trajectory error. Positions are laid out as
 * `[point][frame][x, y]`, i.e. `points * frames * 2` doubles.
 */
enum TcbStatus tcb_ate(const double *xy,
                       const double *ref_xy,
                       size_t points,
                       size_t frames,
                       double *result);

/**
 * Spearman's rho (average ranks) and Kendall's tau-b of two length-`n` lists.
 */
enum TcbStatus tcb_rank_correlation(const double *x,
                                    const double *y,
                                    size_t n,
                                    double *rho,
                                    double *tau);

/**
 * Writes `n` equal-gap 1-based indices into a sequence of `k` frames.
 */
enum TcbStatus tcb_resample_indices(size_t k, size_t n, size_t *indices);

/**
 * Maps a 1-based index authored for `from` frames onto `to` frames.
 * Returns 0 when `index` is outside `1..=from`.
 */
size_t tcb_remap_index(size_t index, size_t from, size_t to);

/**
 * Parses assertion text laid out in `- Check` sections of
 * `Input: Frame …` / `Q: …` pairs.
 */
enum TcbStatus tcb_assertion_set_parse(const char *text, struct TcbAssertionSet **set);

void tcb_assertion_set_free(struct TcbAssertionSet *set);

/**
 * Number of assertions, or 0 for a NULL handle.
 */
size_t tcb_assertion_set_len(const struct TcbAssertionSet *set);

enum TcbStatus tcb_assertion_set_dimension(const struct TcbAssertionSet *set,
                                           size_t i,
                                           enum TcbDimension *dimension);

/**
 * Copies up to `cap` frame indices of assertion `i` into `indices` and
 * stores the full count in `len`.
 */
enum TcbStatus tcb_assertion_set_frame_indices(const struct TcbAssertionSet *set,
                                               size_t i,
                                               size_t *indices,
                                               size_t cap,
                                               size_t *len);

/**
 * Transition completion (0 or 1) given one answer per assertion, in set
 * order (non-zero = Yes).
 */
enum TcbStatus tcb_assertion_set_tc(const struct TcbAssertionSet *set,
                                    const uint8_t *yes,
                                    size_t n,
                                    uint8_t *tc);

/**
 * Fraction of Yes answers over all assertions.
 */
enum TcbStatus tcb_assertion_set_tc_score(const struct TcbAssertionSet *set,
                                          const uint8_t *yes,
                                          size_t n,
                                          double *score);

/**
 * Loads and validates a JSON-lines corpus file.
 */
enum TcbStatus tcb_corpus_load(const char *path,
                               enum TcbManifestKind kind,
                               struct TcbCorpus **corpus);

void tcb_corpus_free(struct TcbCorpus *corpus);

/**
 * Number of prompts, or 0 for a NULL handle.
 */
size_t tcb_corpus_len(const struct TcbCorpus *corpus);

/**
 * Number of prompts in one category, or 0 for a NULL handle.
 */
size_t tcb_corpus_category_count(const struct TcbCorpus *corpus, enum TcbCategory category);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCB_H */
