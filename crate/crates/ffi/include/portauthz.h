#ifndef PORTAUTHZ_H
#define PORTAUTHZ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. Only `PORTAUTHZ_ALLOW` grants anything.
 */
typedef enum {
  /**
   * Success; for an evaluation, the request was allowed.
   */
  PORTAUTHZ_ALLOW = 0,
  /**
   * The request was evaluated and denied. The result JSON says why.
   */
  PORTAUTHZ_DENY = 1,
  PORTAUTHZ_NULL_ARGUMENT = 2,
  PORTAUTHZ_INVALID_UTF8 = 3,
  PORTAUTHZ_INVALID_CONFIG = 4,
  PORTAUTHZ_INVALID_REQUEST = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  PORTAUTHZ_INTERNAL = 6,
} PortauthzStatus;

/**
 * Opaque engine handle.
 */
typedef struct PortauthzEngine PortauthzEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an engine from configuration JSON. Relative artifact paths are
 * resolved against `base_dir`, which may be null for the working directory.
 *
 * # Safety
 * `config_json` and `base_dir` must be null or NUL-terminated strings and
 * `out` must be a valid pointer.
 */
PortauthzStatus portauthz_engine_new(const char *config_json,
                                     const char *base_dir,
                                     PortauthzEngine **out);

/**
 * Builds an engine from a configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
PortauthzStatus portauthz_engine_from_file(const char *path, PortauthzEngine **out);

/**
 * Evaluates one request (credentials root first, presenter_id, pop,
 * vouchers, context). On `ALLOW` or `DENY` `*result_json` receives the
 * decision, audit record and any successor voucher.
 *
 * # Safety
 * `engine` must come from this library and not be freed, `request_json`
 * must be NUL-terminated and `result_json` a valid pointer.
 */
PortauthzStatus portauthz_evaluate(const PortauthzEngine *engine,
                                   const char *request_json,
                                   char **result_json);

/**
 * Overrides the evaluation clock (RFC 3339), or restores the system clock
 * when `now` is null.
 *
 * # Safety
 * `engine` must come from this library; `now` must be null or NUL-terminated.
 */
PortauthzStatus portauthz_engine_set_now(const PortauthzEngine *engine, const char *now);

/**
 * # Safety
 * `engine` must be null or a handle from this library, freed at most once.
 */
void portauthz_engine_free(PortauthzEngine *engine);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed at most once.
 */
void portauthz_string_free(char *s);

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *portauthz_last_error(void);

/**
 * Library version as a static string.
 */
const char *portauthz_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PORTAUTHZ_H */
