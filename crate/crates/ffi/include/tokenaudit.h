#ifndef TOKENAUDIT_H
#define TOKENAUDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TaStatus {
  TA_STATUS_OK = 0,
  TA_STATUS_NULL_POINTER = 1,
  TA_STATUS_INVALID_UTF8 = 2,
  TA_STATUS_BUFFER_TOO_SMALL = 3,
  TA_STATUS_OVERFLOW = 4,
  TA_STATUS_INVALID_VOCABULARY = 10,
  TA_STATUS_INVALID_SEQUENCE = 11,
  TA_STATUS_INVALID_INPUT = 12,
  TA_STATUS_MODEL_CONTRACT = 13,
  TA_STATUS_UNSUPPORTED_RULE = 14,
  TA_STATUS_BUDGET = 15,
  TA_STATUS_PRICING = 16,
  TA_STATUS_CALIBRATION = 17,
  TA_STATUS_UNDEFINED_MARGIN = 18,
  TA_STATUS_INTEGRITY = 19,
  TA_STATUS_CONSTRUCTION = 20,
  TA_STATUS_PARSE = 21,
  TA_STATUS_CONFIG = 22,
  TA_STATUS_IO = 23,
  TA_STATUS_PANIC = 99,
} TaStatus;

/*
 Opaque next-token model handle, bound to the vocabulary it was built for.
 */
typedef struct TaModel TaModel;

/*
 Opaque vocabulary handle.
 */
typedef struct TaVocabulary TaVocabulary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *ta_last_error(void);

/*
 Builds a vocabulary from its JSON description.
 */
enum TaStatus ta_vocab_from_json(const char *json, struct TaVocabulary **out_vocab);

/*
 The reference vocabulary `a, b, aa, ab, aab, EOS`.
 */
enum TaStatus ta_vocab_reference_ab(struct TaVocabulary **out_vocab);

void ta_vocab_free(struct TaVocabulary *vocab);

/*
 Number of tokens, EOS included.
 */
enum TaStatus ta_vocab_len(const struct TaVocabulary *vocab, size_t *out_len);

/*
 EOS id, or `TA_STATUS_INVALID_VOCABULARY` when the vocabulary has none.
 */
enum TaStatus ta_vocab_eos(const struct TaVocabulary *vocab, uint32_t *out_id);

/*
 Greedy longest-match tokenization of a UTF-8 string.
 */
enum TaStatus ta_greedy_tokenize(const struct TaVocabulary *vocab,
                                 const char *text,
                                 uint32_t *out_ids,
                                 size_t cap,
                                 size_t *out_len);

/*
 Number of tokenizations of a string; `TA_STATUS_OVERFLOW` above 2^64-1.
 */
enum TaStatus ta_count_tokenizations(const struct TaVocabulary *vocab,
                                     const char *text,
                                     uint64_t *out_count);

/*
 Renders a sequence into `buf` as a NUL-terminated string. `out_len`
 receives the byte length without the terminator.
 */
enum TaStatus ta_render(const struct TaVocabulary *vocab,
                        const uint32_t *ids,
                        size_t len,
                        char *buf,
                        size_t cap,
                        size_t *out_len);

/*
 Price of a sequence. `mechanism` is `per-token:r_o=<x>`,
 `per-char:r_c=<x>` or `char-table:<path>`.
 */
enum TaStatus ta_price(const struct TaVocabulary *vocab,
                       const char *mechanism,
                       const uint32_t *ids,
                       size_t len,
                       double *out_price);

/*
 Table model from JSON (prefix → distribution entries plus a default).
 */
enum TaStatus ta_model_table_from_json(const struct TaVocabulary *vocab,
                                       const char *json,
                                       struct TaModel **out_model);

/*
 Additively smoothed n-gram model fitted on a corpus given as text, one
 record of whitespace-separated ids per line.
 */
enum TaStatus ta_model_ngram(const struct TaVocabulary *vocab,
                             const char *corpus,
                             size_t order,
                             double alpha,
                             struct TaModel **out_model);

void ta_model_free(struct TaModel *model);

/*
 Plausibility of a sequence under a sampling rule (`topp:<p>`,
 `topk:<k>`, `thresh:<ε>`, `unrestricted`) and temperature. Also returns
 the sequence probability when `out_prob` is non-null.
 */
enum TaStatus ta_is_plausible(const struct TaVocabulary *vocab,
                              const struct TaModel *model,
                              const uint32_t *ids,
                              size_t len,
                              const char *rule,
                              double temperature,
                              bool *out_plausible,
                              double *out_prob);

/*
 Plausibility-checked heuristic misreport with `m` splits. Writes the
 reported ids and whether the split candidate passed the check.
 */
enum TaStatus ta_heuristic(const struct TaVocabulary *vocab,
                           const struct TaModel *model,
                           const uint32_t *ids,
                           size_t len,
                           size_t m,
                           const char *rule,
                           double temperature,
                           uint32_t *out_ids,
                           size_t cap,
                           size_t *out_len,
                           bool *out_passed);

/*
 Up to `m` uniformly random splits, seeded. Writes the reported ids and
 the number of splits applied.
 */
enum TaStatus ta_random_split(const struct TaVocabulary *vocab,
                              const uint32_t *ids,
                              size_t len,
                              size_t m,
                              uint64_t seed,
                              uint32_t *out_ids,
                              size_t cap,
                              size_t *out_len,
                              size_t *out_splits);

/*
 Per-character rate from `n` (tokens, characters) records and a
 per-token rate.
 */
enum TaStatus ta_calibrate_tpc(const size_t *tokens,
                               const size_t *chars,
                               size_t n,
                               double r_o,
                               double *out_tokens_per_char,
                               double *out_r_c);

/*
 Builds the reduction gadget for a digraph on `n` nodes (edges as
 0-based `(from, to)` pairs, `2·n_edges` entries) and compares the exact
 Hamiltonian-path answer with the longest plausible tokenization.
 `variant` is `topp`, `topk`, `thresh` or `thresh:<δ>`; `out_longest`
 is 0 when nothing is plausible.
 */
enum TaStatus ta_hardness_verify(size_t n,
                                 const uint32_t *edges,
                                 size_t n_edges,
                                 const char *variant,
                                 bool *out_hamiltonian,
                                 size_t *out_longest,
                                 bool *out_agrees);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOKENAUDIT_H */
