#ifndef SPRINTOPT_H
#define SPRINTOPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpoStatus {
  SPO_STATUS_OK = 0,
  SPO_STATUS_NULL_POINTER = 1,
  SPO_STATUS_INVALID_UTF8 = 2,
  SPO_STATUS_INVALID_ARGUMENT = 3,
  SPO_STATUS_NOT_FOUND = 4,
  SPO_STATUS_CONFLICT = 5,
  SPO_STATUS_PRIMING = 6,
  SPO_STATUS_INSUFFICIENT_TRIALS = 7,
  SPO_STATUS_IO = 8,
  SPO_STATUS_JSON = 9,
  SPO_STATUS_PANIC = 10,
} SpoStatus;

// Opaque engine bound to a store directory.
typedef struct SpoEngine SpoEngine;

// Opaque search space.
typedef struct SpoSpace SpoSpace;

typedef struct SpoHyperbandConfig {
  uint64_t max_resource;
  uint64_t eta;
  uint32_t s_max;
  uint64_t budget;
} SpoHyperbandConfig;

typedef struct SpoScut {
  double threshold;
  double f_beta;
  bool guarded;
} SpoScut;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Owned by the library.
const char *spo_last_error(void);

// Releases a string returned by this library. NULL is ignored.
void spo_string_free(char *s);

// Parses and validates a search space from JSON.
enum SpoStatus spo_space_from_json(const char *json, struct SpoSpace **out);

void spo_space_free(struct SpoSpace *space);

enum SpoStatus spo_space_to_json(const struct SpoSpace *space, char **out);

// Draws one point uniformly; written as a JSON object.
enum SpoStatus spo_space_sample(const struct SpoSpace *space, uint64_t seed, char **out);

enum SpoStatus spo_space_contains(const struct SpoSpace *space, const char *point_json, bool *out);

// Shrinks the space to the hull of the `k` best scored points (lower is
// better) plus default margins. `scored_json` is `[{"point": {...}, "score": x}]`.
enum SpoStatus spo_space_prune(const struct SpoSpace *space,
                               const char *scored_json,
                               size_t k,
                               struct SpoSpace **out);

enum SpoStatus spo_hyperband_derive(uint64_t max_resource,
                                    uint64_t eta,
                                    struct SpoHyperbandConfig *out);

// F-beta optimal cut over `n` (probability, gold) pairs, floored at `low_bound`.
enum SpoStatus spo_scut(const double *probs,
                        const bool *gold,
                        size_t n,
                        double beta,
                        double low_bound,
                        struct SpoScut *out);

// Micro-F1 from pooled counts; 0 when there is nothing to score.
double spo_micro_f1(uint64_t tp, uint64_t fp, uint64_t fn_);

// Opens (replaying) the store at `root`.
enum SpoStatus spo_engine_open(const char *root, struct SpoEngine **out);

void spo_engine_free(struct SpoEngine *engine);

// Summary of a sprint (status, counts, incumbent) as JSON.
enum SpoStatus spo_engine_report(const struct SpoEngine *engine, const char *sprint, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPRINTOPT_H */
