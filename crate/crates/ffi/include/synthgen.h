#ifndef SYNTHGEN_H
#define SYNTHGEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SynthgenStatus {
  SYNTHGEN_STATUS_OK = 0,
  SYNTHGEN_STATUS_NULL_POINTER = 1,
  SYNTHGEN_STATUS_INVALID_ARGUMENT = 2,
  SYNTHGEN_STATUS_IO = 3,
  SYNTHGEN_STATUS_PARSE = 4,
  SYNTHGEN_STATUS_SAMPLING = 5,
  SYNTHGEN_STATUS_PANIC = 6,
} SynthgenStatus;

typedef struct SynthgenModel SynthgenModel;

typedef struct SynthgenSamples SynthgenSamples;

typedef struct SynthgenVocab SynthgenVocab;

// Sampling options. `n_blocks == 0` draws the block count from the model.
typedef struct SynthgenSampleOptions {
  size_t count;
  size_t steps;
  size_t n_blocks;
  uint64_t seed;
  bool constraints;
} SynthgenSampleOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until
// the next call into this library from the same thread.
const char *synthgen_last_error(void);

// Library version as a static string.
const char *synthgen_version(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum SynthgenStatus synthgen_vocab_load(const char *path, struct SynthgenVocab **out);

// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum SynthgenStatus synthgen_vocab_from_toml(const char *text, struct SynthgenVocab **out);

// # Safety
// `vocab` must be null or a live handle.
size_t synthgen_vocab_num_blocks(const struct SynthgenVocab *vocab);

// # Safety
// `vocab` must be null or a live handle.
size_t synthgen_vocab_num_reactions(const struct SynthgenVocab *vocab);

// # Safety
// `vocab` must be null or a handle not yet freed.
void synthgen_vocab_free(struct SynthgenVocab *vocab);

// Loads a fitted tabular model and checks it against `vocab`.
//
// # Safety
// `path` must be a NUL-terminated string, `vocab` a live handle and `out` a
// writable pointer.
enum SynthgenStatus synthgen_model_load(const char *path,
                                        const struct SynthgenVocab *vocab,
                                        struct SynthgenModel **out);

// # Safety
// `model` must be null or a handle not yet freed.
void synthgen_model_free(struct SynthgenModel *model);

struct SynthgenSampleOptions synthgen_sample_options_default(void);

// Draws `options.count` samples. Individual failures do not fail the call;
// they appear as null lines in the result.
//
// # Safety
// `vocab` and `model` must be live handles, `options` must point to a valid
// struct and `out` must be writable.
enum SynthgenStatus synthgen_sample(const struct SynthgenVocab *vocab,
                                    const struct SynthgenModel *model,
                                    const struct SynthgenSampleOptions *options,
                                    struct SynthgenSamples **out);

// # Safety
// `samples` must be null or a live handle.
size_t synthgen_samples_len(const struct SynthgenSamples *samples);

// Record line of sample `index`, or null if it failed or is out of range.
// Owned by `samples`.
//
// # Safety
// `samples` must be null or a live handle.
const char *synthgen_samples_line(const struct SynthgenSamples *samples, size_t index);

// # Safety
// `samples` must be null or a live handle.
bool synthgen_samples_is_valid(const struct SynthgenSamples *samples, size_t index);

// # Safety
// `samples` must be null or a handle not yet freed.
void synthgen_samples_free(struct SynthgenSamples *samples);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNTHGEN_H */
