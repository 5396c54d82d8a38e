#ifndef ROBIRANK_H
#define ROBIRANK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RbkStatus {
  RBK_STATUS_OK = 0,
  RBK_STATUS_NULL_ARGUMENT = 1,
  RBK_STATUS_INVALID_ARGUMENT = 2,
  RBK_STATUS_IO = 3,
  RBK_STATUS_PARSE = 4,
  RBK_STATUS_INVALID_DATA = 5,
  RBK_STATUS_SHAPE = 6,
  RBK_STATUS_DOMAIN = 7,
  RBK_STATUS_DIVERGENCE = 8,
  RBK_STATUS_CHECKPOINT = 9,
  RBK_STATUS_PANIC = 10,
} RbkStatus;

/**
 * Observed (context, item) pairs.
 */
typedef struct RbkInteractions RbkInteractions;

/**
 * Context and item embeddings.
 */
typedef struct RbkLatentModel RbkLatentModel;

/**
 * Linear scoring function.
 */
typedef struct RbkLinearModel RbkLinearModel;

/**
 * Feature-track dataset (queries with graded items).
 */
typedef struct RbkRankingDataset RbkRankingDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rbk_last_error_message(void);

/**
 * Reads a LETOR file (`<label> qid:<id> <i>:<v> ...`).
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum RbkStatus rbk_ranking_dataset_load_letor(const char *path, struct RbkRankingDataset **out);

/**
 * # Safety
 * `data` must be NULL or a handle from this library, freed at most once.
 */
void rbk_ranking_dataset_free(struct RbkRankingDataset *data);

/**
 * Number of queries; 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t rbk_ranking_dataset_num_contexts(const struct RbkRankingDataset *data);

/**
 * Feature dimension; 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t rbk_ranking_dataset_feature_dim(const struct RbkRankingDataset *data);

/**
 * Trains a linear ranker for every lambda in `lambdas` and keeps the one
 * with the best validation NDCG@10. `n_lambdas == 0` uses the default grid.
 * Feature dimensions of the two sets are aligned by zero padding.
 *
 * # Safety
 * Handles must be live; `lambdas` must hold `n_lambdas` values.
 */
enum RbkStatus rbk_linear_train(const struct RbkRankingDataset *train,
                                const struct RbkRankingDataset *valid,
                                const double *lambdas,
                                size_t n_lambdas,
                                uint64_t seed,
                                struct RbkLinearModel **out);

/**
 * Wraps explicit weights in a model handle.
 *
 * # Safety
 * `weights` must hold `dim` values.
 */
enum RbkStatus rbk_linear_new(const double *weights, size_t dim, struct RbkLinearModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from this library, freed at most once.
 */
void rbk_linear_free(struct RbkLinearModel *model);

/**
 * Number of weights; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t rbk_linear_dim(const struct RbkLinearModel *model);

/**
 * Copies the weights into `out`, which must hold `len >= dim` values.
 *
 * # Safety
 * `out` must be writable for `len` values.
 */
enum RbkStatus rbk_linear_weights(const struct RbkLinearModel *model, double *out, size_t len);

/**
 * Score of one feature vector.
 *
 * # Safety
 * `features` must hold `dim` values.
 */
enum RbkStatus rbk_linear_score(const struct RbkLinearModel *model,
                                const double *features,
                                size_t dim,
                                double *out);

/**
 * Mean NDCG@k over the dataset's queries.
 *
 * # Safety
 * Handles must be live.
 */
enum RbkStatus rbk_linear_mean_ndcg(const struct RbkLinearModel *model,
                                    const struct RbkRankingDataset *data,
                                    size_t k,
                                    double *out);

/**
 * # Safety
 * `path` must be a nul-terminated string.
 */
enum RbkStatus rbk_linear_save(const struct RbkLinearModel *model, const char *path);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum RbkStatus rbk_linear_load(const char *path, struct RbkLinearModel **out);

/**
 * Builds an interaction set from parallel arrays of context and item
 * indices. Repeated pairs are an error.
 *
 * # Safety
 * `contexts` and `items` must each hold `n_pairs` values.
 */
enum RbkStatus rbk_interactions_new(size_t num_contexts,
                                    size_t num_items,
                                    const size_t *contexts,
                                    const size_t *items,
                                    size_t n_pairs,
                                    struct RbkInteractions **out);

/**
 * # Safety
 * `data` must be NULL or a handle from this library, freed at most once.
 */
void rbk_interactions_free(struct RbkInteractions *data);

/**
 * Number of pairs; 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t rbk_interactions_len(const struct RbkInteractions *data);

/**
 * Trains embeddings of size `dim` for `rounds` outer rounds. `workers == 1`
 * runs the serial trainer, larger values the stratified parallel one.
 * `eta <= 0` tunes the step over the default grid (serial only).
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum RbkStatus rbk_latent_train(const struct RbkInteractions *data,
                                size_t dim,
                                double eta,
                                size_t rounds,
                                size_t workers,
                                uint64_t seed,
                                struct RbkLatentModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from this library, freed at most once.
 */
void rbk_latent_free(struct RbkLatentModel *model);

/**
 * Inner product of the context and item embeddings.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum RbkStatus rbk_latent_score(const struct RbkLatentModel *model,
                                size_t context,
                                size_t item,
                                double *out);

/**
 * # Safety
 * Handles must be live and `out` valid.
 */
enum RbkStatus rbk_latent_objective(const struct RbkLatentModel *model,
                                    const struct RbkInteractions *data,
                                    double mu,
                                    double *out);

/**
 * Mean precision@k on `test`, excluding each context's `train` items.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum RbkStatus rbk_latent_precision_at_k(const struct RbkLatentModel *model,
                                         const struct RbkInteractions *train,
                                         const struct RbkInteractions *test,
                                         size_t k,
                                         double *out);

/**
 * # Safety
 * `path` must be a nul-terminated string.
 */
enum RbkStatus rbk_latent_save(const struct RbkLatentModel *model, const char *path);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum RbkStatus rbk_latent_load(const char *path, struct RbkLatentModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBIRANK_H */
