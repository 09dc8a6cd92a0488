#ifndef DNAMASK_H
#define DNAMASK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_POINTER = 1,
  DM_STATUS_INVALID_ARGUMENT = 2,
  DM_STATUS_INVALID_BASE = 3,
  DM_STATUS_SEQUENCE_TOO_SHORT = 4,
  DM_STATUS_BUFFER_TOO_SMALL = 5,
  DM_STATUS_STEP_OUT_OF_RANGE = 6,
  DM_STATUS_IO = 7,
  DM_STATUS_INTERNAL = 8,
} DmStatus;

typedef enum {
  DM_STRATEGY_OVERLAPPING = 0,
  DM_STRATEGY_NON_OVERLAPPING = 1,
  DM_STRATEGY_SAME_LENGTH = 2,
} DmStrategy;

/**
 * Opaque model loaded from a checkpoint directory.
 */
typedef struct DmModel DmModel;

/**
 * Opaque masking curriculum.
 */
typedef struct DmSchedule DmSchedule;

/**
 * Opaque k-mer vocabulary.
 */
typedef struct DmVocab DmVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated
 * to `cap`) and returns its full length in bytes excluding the NUL.
 */
size_t dm_last_error_message(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dm_version(void);

DmStatus dm_vocab_new(size_t k, DmVocab **out);

void dm_vocab_free(DmVocab *vocab);

/**
 * Number of ids, special tokens included (0 for a null handle).
 */
size_t dm_vocab_size(const DmVocab *vocab);

/**
 * Id of a k-mer or special token such as `"[MASK]"`.
 */
DmStatus dm_vocab_token_id(const DmVocab *vocab, const char *token, uint32_t *out_id);

/**
 * Encodes `len` bases (A/C/G/T/N, any case) with the given strategy.
 */
DmStatus dm_encode(const DmVocab *vocab,
                   const uint8_t *bases,
                   size_t len,
                   DmStrategy strategy,
                   uint32_t *out_ids,
                   size_t cap,
                   size_t *out_len);

/**
 * Default five-stage curriculum scaled to `total_steps`.
 */
DmStatus dm_schedule_new(uint64_t total_steps, DmSchedule **out);

void dm_schedule_free(DmSchedule *schedule);

DmStatus dm_allowed_widths(const DmSchedule *schedule,
                           uint64_t step,
                           size_t *out_widths,
                           size_t cap,
                           size_t *out_len);

/**
 * Masked indices for sequence `seq_index` at `step`, drawn from the stream
 * keyed by `(seed, step, seq_index)`. Writes the chosen span width.
 */
DmStatus dm_plan_mask(const DmSchedule *schedule,
                      size_t seq_len,
                      uint64_t step,
                      double probability,
                      uint64_t seed,
                      uint64_t seq_index,
                      size_t *out_ids,
                      size_t cap,
                      size_t *out_len,
                      size_t *out_width);

/**
 * Exact masking probability of an interior position and averaged over all
 * `seq_len` positions, for a single width `m`.
 */
DmStatus dm_expected_mask_fraction(double probability,
                                   size_t m,
                                   size_t seq_len,
                                   double *out_interior,
                                   double *out_average);

/**
 * Matthews correlation coefficient; 0 when a marginal is empty.
 */
double dm_mcc(uint64_t tp, uint64_t tn, uint64_t fp, uint64_t fn_);

/**
 * Loads the parameters of a checkpoint directory.
 */
DmStatus dm_model_load(const char *path, DmModel **out);

void dm_model_free(DmModel *model);

size_t dm_model_num_layers(const DmModel *model);

size_t dm_model_vocab_size(const DmModel *model);

/**
 * Per-layer `[CLS]` attention mass and attention entropy for one framed
 * input (`[PAD]` ids are treated as padding), averaged over the query
 * positions in `masked`. Both outputs need `num_layers` slots.
 */
DmStatus dm_model_attention_metrics(const DmModel *model,
                                    const uint32_t *ids,
                                    size_t n,
                                    const size_t *masked,
                                    size_t n_masked,
                                    double *out_cls_mass,
                                    double *out_entropy,
                                    size_t cap,
                                    size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DNAMASK_H */
