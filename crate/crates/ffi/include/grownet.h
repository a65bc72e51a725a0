#ifndef GROWNET_H
#define GROWNET_H

/* Generated by cbindgen from grownet-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  GROWNET_STATUS_OK = 0,
  GROWNET_STATUS_INVALID_ARGUMENT = 1,
  GROWNET_STATUS_STRUCTURE = 2,
  GROWNET_STATUS_NUMERIC = 3,
  GROWNET_STATUS_NOT_FOUND = 4,
  GROWNET_STATUS_FORMAT = 5,
  GROWNET_STATUS_IO = 6,
  GROWNET_STATUS_TERMINAL = 7,
  GROWNET_STATUS_DATASET = 8,
  GROWNET_STATUS_NULL_POINTER = 9,
  GROWNET_STATUS_UTF8 = 10,
  GROWNET_STATUS_INTERNAL = 11,
} GrownetStatus;

/**
 * Learning-rate schedule.
 */
typedef enum {
  GROWNET_LR_MODE_PROGRESSIVE = 0,
  GROWNET_LR_MODE_CONSTANT = 1,
} GrownetLrMode;

/**
 * Simulation orchestrator mode.
 */
typedef enum {
  GROWNET_ORCHESTRATOR_CONSTANT = 0,
  GROWNET_ORCHESTRATOR_PROGRESS_CHECK = 1,
  GROWNET_ORCHESTRATOR_OVERFIT = 2,
} GrownetOrchestrator;

/**
 * Candidate scoring mode used inside the search.
 */
typedef enum {
  GROWNET_SCORE_MODE_ACCURACY = 0,
  GROWNET_SCORE_MODE_LOSS = 1,
} GrownetScoreMode;

/**
 * Decision policy for structural changes.
 */
typedef enum {
  GROWNET_POLICY_MCTS = 0,
  GROWNET_POLICY_GREEDY = 1,
  GROWNET_POLICY_RANDOM = 2,
} GrownetPolicy;

/**
 * Opaque dataset handle.
 */
typedef struct GrownetDataset GrownetDataset;

/**
 * Opaque model handle.
 */
typedef struct GrownetModel GrownetModel;

/**
 * Training options; obtain defaults from [`grownet_train_options_default`].
 */
typedef struct {
  uint32_t generations;
  uint32_t epochs_per_generation;
  double lr_max;
  GrownetLrMode lr_mode;
  GrownetOrchestrator orchestrator;
  GrownetScoreMode score_mode;
  GrownetPolicy policy;
  /**
   * MCTS wall-clock budget per generation, in seconds.
   */
  double time_limit_secs;
  /**
   * When nonzero, run exactly this many MCTS iterations instead of the
   * wall clock (reproducible mode).
   */
  uint64_t mcts_iterations;
  uint32_t rollout_depth;
  double exploration;
  uint32_t sim_epochs;
  /**
   * Simulation-set size per class, drawn from the training set.
   */
  uint32_t sim_per_class;
  uint32_t batch_size;
  uint64_t seed;
  double overfit_gap;
} GrownetTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread. Never null; empty when
 * no error has occurred. Valid until the next failing call on this thread.
 */
const char *grownet_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *grownet_version(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be a pointer previously returned through a `char **` out
 * parameter of this library, not yet freed; null is ignored.
 */
void grownet_string_free(char *s);

/**
 * Creates the base model with a convolutional input layer.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one pointer.
 */
GrownetStatus grownet_model_new_conv(uint32_t channels,
                                     uint32_t height,
                                     uint32_t width,
                                     uint32_t def_neu,
                                     uint32_t conv_channels,
                                     uint32_t classes,
                                     uint64_t seed,
                                     GrownetModel **out);

/**
 * Creates the base model with a dense input layer.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one pointer.
 */
GrownetStatus grownet_model_new_dense(uint32_t features,
                                      uint32_t def_neu,
                                      uint32_t classes,
                                      uint64_t seed,
                                      GrownetModel **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not have been freed already.
 */
void grownet_model_free(GrownetModel *model);

/**
 * Number of layers in the model; 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle from this library (or null).
 */
uint32_t grownet_model_layer_count(const GrownetModel *model);

/**
 * Saves a model to a file.
 *
 * # Safety
 * `model` must be a live handle; `path` a valid NUL-terminated string.
 */
GrownetStatus grownet_model_save(const GrownetModel *model, const char *path);

/**
 * Loads a model from a file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` writable storage for
 * one pointer.
 */
GrownetStatus grownet_model_load(const char *path, GrownetModel **out);

/**
 * Renders the model architecture as a Graphviz DOT string; free the result
 * with [`grownet_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out_text` writable storage for one
 * pointer.
 */
GrownetStatus grownet_model_export_dot(const GrownetModel *model, char **out_text);

/**
 * Loads an IDX image/label file pair as a dataset.
 *
 * # Safety
 * `images`/`labels` must be valid NUL-terminated strings; `out` writable
 * storage for one pointer.
 */
GrownetStatus grownet_dataset_load_idx(const char *images,
                                       const char *labels,
                                       GrownetDataset **out);

/**
 * Releases a dataset handle; null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not have been freed already.
 */
void grownet_dataset_free(GrownetDataset *dataset);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle from this library (or null).
 */
uint32_t grownet_dataset_len(const GrownetDataset *dataset);

/**
 * Number of classes; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle from this library (or null).
 */
uint32_t grownet_dataset_class_count(const GrownetDataset *dataset);

/**
 * Splits a dataset into stratified train/test handles.
 *
 * # Safety
 * `dataset` must be a live handle; `out_train`/`out_test` writable storage.
 */
GrownetStatus grownet_dataset_split(const GrownetDataset *dataset,
                                    double test_fraction,
                                    uint64_t seed,
                                    GrownetDataset **out_train,
                                    GrownetDataset **out_test);

/**
 * Fills `out` with the library defaults.
 *
 * # Safety
 * `out` must be a valid pointer to a `GrownetTrainOptions`.
 */
GrownetStatus grownet_train_options_default(GrownetTrainOptions *out);

/**
 * Trains the model in place on a single-input dataset. The simulation set
 * is drawn from the training set (`sim_per_class` samples per class).
 * Writes the final generation's test accuracy to `final_test_acc` when it
 * is non-null.
 *
 * # Safety
 * `model` must be a live mutable handle, `train_set`/`test_set` live
 * dataset handles; `opts` a valid options struct.
 */
GrownetStatus grownet_train(GrownetModel *model,
                            const GrownetDataset *train_set,
                            const GrownetDataset *test_set,
                            const GrownetTrainOptions *opts,
                            double *final_test_acc);

/**
 * Classification accuracy of the model on a dataset.
 *
 * # Safety
 * `model` and `dataset` must be live handles; `accuracy` writable.
 */
GrownetStatus grownet_evaluate(const GrownetModel *model,
                               const GrownetDataset *dataset,
                               double *accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROWNET_H */
