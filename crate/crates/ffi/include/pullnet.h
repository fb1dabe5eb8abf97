#ifndef PULLNET_H
#define PULLNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PnStatus {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_ARGUMENT = 1,
  PN_STATUS_INVALID_UTF8 = 2,
  PN_STATUS_IO = 3,
  PN_STATUS_PARSE = 4,
  PN_STATUS_CONFIG = 5,
  PN_STATUS_NOT_FOUND = 6,
  PN_STATUS_RUNTIME = 7,
  PN_STATUS_PANIC = 8,
} PnStatus;

/**
 * A loaded dataset, configuration and model. Opaque to C.
 */
typedef struct PnEngine PnEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pn_last_error(void);

/**
 * Library version as a static string.
 */
const char *pn_version(void);

/**
 * Loads `data_dir` and the checkpoint at `model_path`. `config_path` may be
 * null for the default configuration.
 *
 * # Safety
 * String arguments are null or NUL-terminated; `out` is a valid pointer.
 */
enum PnStatus pn_engine_open(const char *data_dir,
                             const char *config_path,
                             const char *model_path,
                             struct PnEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` is null or was returned by [`pn_engine_open`] and not yet freed.
 */
void pn_engine_free(struct PnEngine *engine);

/**
 * Answers `question` and writes a JSON object to `*out_json`:
 * `{"question_entities": [..], "answers": [{"entity", "score"}], "entities", "facts", "docs", "trace": [..]}`
 * with at most `top_n` answers. Release the string with [`pn_string_free`].
 *
 * # Safety
 * `engine` is a live engine; `question` is NUL-terminated; `out_json` is valid.
 */
enum PnStatus pn_answer(const struct PnEngine *engine,
                        const char *question,
                        size_t top_n,
                        char **out_json);

/**
 * Evaluates the engine on a question split (`"train"`, `"dev"`, `"test"`).
 *
 * # Safety
 * `engine` is a live engine; `split` is NUL-terminated; outputs are valid.
 */
enum PnStatus pn_evaluate(const struct PnEngine *engine,
                          const char *split,
                          double *hits_at_1,
                          double *answer_recall);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` is null or came from this library and was not freed before.
 */
void pn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PULLNET_H */
