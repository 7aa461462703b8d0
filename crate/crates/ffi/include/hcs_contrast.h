#ifndef HCS_CONTRAST_H
#define HCS_CONTRAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HcsPairSet {
  HCS_PAIR_SET_ORDERED_DISTINCT = 0,
  HCS_PAIR_SET_UNORDERED_DISTINCT = 1,
  HCS_PAIR_SET_ALL_PAIRS = 2,
} HcsPairSet;

/**
 * Result of every fallible call.
 */
typedef enum HcsStatus {
  HCS_STATUS_OK = 0,
  HCS_STATUS_NULL_POINTER = 1,
  HCS_STATUS_INVALID_ARGUMENT = 2,
  HCS_STATUS_NUMERIC = 3,
  HCS_STATUS_IO = 4,
  HCS_STATUS_PANIC = 5,
} HcsStatus;

typedef enum HcsLossKind {
  HCS_LOSS_KIND_CLIP = 0,
  HCS_LOSS_KIND_EMM = 1,
  HCS_LOSS_KIND_IMM = 2,
} HcsLossKind;

typedef enum HcsDirection {
  HCS_DIRECTION_IMG_TO_MOL = 0,
  HCS_DIRECTION_MOL_TO_IMG = 1,
} HcsDirection;

/**
 * Molecule vectors with `M` image views each.
 */
typedef struct HcsBatch HcsBatch;

/**
 * Paired molecule and image embeddings for retrieval.
 */
typedef struct HcsEmbeddings HcsEmbeddings;

/**
 * Loss hyperparameters; start from [`hcs_loss_config_default`].
 */
typedef struct HcsLossConfig {
  double tau;
  double gamma;
  enum HcsPairSet pair_set;
  bool denominator_includes_positives;
  bool symmetric_clip;
} HcsLossConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *hcs_last_error(void);

/**
 * Default loss settings: `tau = 0.07`, `gamma = 0.5`, ordered distinct view
 * pairs, positives excluded from the EMM/IMM denominators, symmetric CLIP.
 */
struct HcsLossConfig hcs_loss_config_default(void);

/**
 * Copy an `n × d` molecule array and an `n × m × d` image array into a new
 * batch.
 *
 * # Safety
 * `mol` must hold `n·d` doubles, `img` `n·m·d` doubles, and `out` must be
 * writable.
 */
enum HcsStatus hcs_batch_new(size_t n,
                             size_t m,
                             size_t d,
                             const double *mol,
                             const double *img,
                             struct HcsBatch **out);

/**
 * Seeded batch of random unit vectors.
 *
 * # Safety
 * `out` must be writable.
 */
enum HcsStatus hcs_batch_random_unit(size_t n,
                                     size_t m,
                                     size_t d,
                                     uint64_t seed,
                                     struct HcsBatch **out);

/**
 * Release a batch; null is ignored.
 *
 * # Safety
 * `batch` must come from this library and not be used afterwards.
 */
void hcs_batch_free(struct HcsBatch *batch);

/**
 * Loss value and, when the output pointers are non-null, its gradients
 * (`n·d` and `n·m·d` doubles, same layout as the inputs).
 *
 * # Safety
 * `batch` and `cfg` must be valid; `value` writable; gradient buffers null
 * or writable for their full size.
 */
enum HcsStatus hcs_loss_evaluate(enum HcsLossKind kind,
                                 const struct HcsBatch *batch,
                                 const struct HcsLossConfig *cfg,
                                 double *value,
                                 double *grad_mol,
                                 double *grad_img);

/**
 * Largest relative error between the analytic gradient and central
 * differences with step `eps`.
 *
 * # Safety
 * `batch` and `cfg` must be valid and `max_rel_error` writable.
 */
enum HcsStatus hcs_grad_check(enum HcsLossKind kind,
                              const struct HcsBatch *batch,
                              const struct HcsLossConfig *cfg,
                              double eps,
                              double *max_rel_error);

/**
 * Build an embedding table from `n_ids` molecule rows and `n_img` image rows
 * of width `d`; `img_owner[r]` is the molecule row image `r` belongs to.
 * Rows are normalized to unit length. Ids are `"0"`, `"1"`, ...
 *
 * # Safety
 * `mol` must hold `n_ids·d` doubles, `img` `n_img·d` doubles, `img_owner`
 * `n_img` entries, and `out` must be writable.
 */
enum HcsStatus hcs_embeddings_new(size_t n_ids,
                                  size_t n_img,
                                  size_t d,
                                  const double *mol,
                                  const double *img,
                                  const size_t *img_owner,
                                  struct HcsEmbeddings **out);

/**
 * Read an `id,modality,e0,...` CSV table.
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string and `out` writable.
 */
enum HcsStatus hcs_embeddings_read_csv(const char *path, struct HcsEmbeddings **out);

/**
 * Release an embedding table; null is ignored.
 *
 * # Safety
 * `table` must come from this library and not be used afterwards.
 */
void hcs_embeddings_free(struct HcsEmbeddings *table);

/**
 * 1:`pool_size` retrieval. Writes one hit rate per entry of `ks` into
 * `hit_rates` and the mean reciprocal rank into `mrr`.
 *
 * # Safety
 * `table` must be valid, `ks` and `hit_rates` must hold `n_ks` entries, and
 * `mrr` must be writable.
 */
enum HcsStatus hcs_retrieval_evaluate(const struct HcsEmbeddings *table,
                                      size_t pool_size,
                                      const size_t *ks,
                                      size_t n_ks,
                                      enum HcsDirection direction,
                                      uint64_t seed,
                                      double *hit_rates,
                                      double *mrr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HCS_CONTRAST_H */
