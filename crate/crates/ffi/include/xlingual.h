#ifndef XLINGUAL_H
#define XLINGUAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define XL_OK 0

#define XL_ERR_NULL_POINTER 100

#define XL_ERR_INVALID_UTF8 101

#define XL_ERR_BUFFER_TOO_SMALL 102

#define XL_ERR_OUT_OF_RANGE 103

#define XL_ERR_PANIC 104

#define XL_REWARD_RC 0

#define XL_REWARD_RM 1

#define XL_REWARD_RT 2

#define XL_SPLIT_TRAIN 0

#define XL_SPLIT_EVAL 1

/**
 * A language-model checkpoint.
 */
typedef struct XlModel XlModel;

/**
 * A generated or loaded synthetic world.
 */
typedef struct XlWorld XlWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on this thread.
 */
const char *xl_last_error_message(void);

/**
 * Machine-readable category of the last failure on this thread, or null,
 * with the same lifetime as the message.
 */
const char *xl_last_error_category(void);

/**
 * Generates a world with default settings apart from the given sizes.
 *
 * # Safety
 * `out_world` must be a valid pointer to writable storage.
 */
int32_t xl_world_generate(size_t num_langs,
                          size_t alphabet,
                          size_t train_prompts,
                          size_t eval_prompts,
                          uint64_t seed,
                          struct XlWorld **out_world);

/**
 * Loads a world from a `tasks.jsonl` written by `gen-world`.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out_world` must be writable.
 */
int32_t xl_world_load(const char *tasks_path, struct XlWorld **out_world);

/**
 * # Safety
 * `world` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void xl_world_free(struct XlWorld *world);

/**
 * # Safety
 * `world` must be a live handle or null.
 */
size_t xl_world_vocab_size(const struct XlWorld *world);

/**
 * Number of prompts in `split` (`XL_SPLIT_TRAIN` or `XL_SPLIT_EVAL`).
 *
 * # Safety
 * `world` must be a live handle or null.
 */
size_t xl_world_num_prompts(const struct XlWorld *world, int32_t split);

/**
 * Writes the tokens of prompt `index` of `split` rendered in `lang`.
 *
 * # Safety
 * `buf` must hold `cap` entries; `out_len` must be writable.
 */
int32_t xl_world_prompt(const struct XlWorld *world,
                        int32_t split,
                        size_t index,
                        size_t lang,
                        uint32_t *buf,
                        size_t cap,
                        size_t *out_len);

/**
 * Oracle score in `[0, 1]` of `response` to `prompt`.
 *
 * # Safety
 * Token pointers must hold the given number of entries.
 */
int32_t xl_oracle_score(const struct XlWorld *world,
                        const uint32_t *prompt,
                        size_t prompt_len,
                        const uint32_t *response,
                        size_t response_len,
                        double *out_score);

/**
 * # Safety
 * `ckpt_path` must be a nul-terminated string; `out_model` writable.
 */
int32_t xl_model_load(const char *ckpt_path, struct XlModel **out_model);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void xl_model_free(struct XlModel *model);

/**
 * Total `log π(response | prompt)`.
 *
 * # Safety
 * Token pointers must hold the given number of entries.
 */
int32_t xl_model_logprob(const struct XlModel *model,
                         const uint32_t *prompt,
                         size_t prompt_len,
                         const uint32_t *response,
                         size_t response_len,
                         double *out_logprob);

/**
 * Greedy continuation of `prompt`, at most `max_new_tokens` long.
 *
 * # Safety
 * `buf` must hold `cap` entries; `out_len` must be writable.
 */
int32_t xl_model_greedy(const struct XlModel *model,
                        const uint32_t *prompt,
                        size_t prompt_len,
                        size_t max_new_tokens,
                        uint32_t *buf,
                        size_t cap,
                        size_t *out_len);

/**
 * Reward of `response` to training prompt `prompt_index` in `lang` under
 * `variant` (`XL_REWARD_RC`, `XL_REWARD_RM` or `XL_REWARD_RT`), with length
 * penalty `alpha` per token. `noise` and `seed` drive the `rt` translation;
 * `sample_id` selects its random stream.
 *
 * # Safety
 * Handles must be live; `response` must hold `response_len` entries.
 */
int32_t xl_reward(const struct XlModel *policy,
                  const struct XlModel *reference,
                  const struct XlWorld *world,
                  int32_t variant,
                  size_t lang,
                  size_t prompt_index,
                  uint32_t sample_id,
                  const uint32_t *response,
                  size_t response_len,
                  double beta,
                  double alpha,
                  double noise,
                  uint64_t seed,
                  double *out_reward);

/**
 * Runs one pipeline stage (a subcommand name such as `"gen-world"`) in
 * `run_dir`. `config_path` may be null for the defaults.
 *
 * # Safety
 * String arguments must be nul-terminated or, for `config_path`, null.
 */
int32_t xl_run_stage(const char *run_dir, const char *config_path, const char *stage, bool force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XLINGUAL_H */
