#ifndef STYLEPROBE_H
#define STYLEPROBE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_ARGUMENT = 1,
  SP_STATUS_INVALID_UTF8 = 2,
  SP_STATUS_IO = 3,
  SP_STATUS_FORMAT = 4,
  SP_STATUS_DIMENSION_MISMATCH = 5,
  SP_STATUS_LAYER_OUT_OF_RANGE = 6,
  SP_STATUS_NUMERIC = 7,
  SP_STATUS_INVALID = 8,
  SP_STATUS_PANIC = 9,
} SpStatus;

typedef enum SpPooling {
  SP_POOLING_MEAN = 0,
  SP_POOLING_MAX = 1,
} SpPooling;

typedef enum SpCorrection {
  SP_CORRECTION_NONE = 0,
  SP_CORRECTION_ABTT = 1,
  SP_CORRECTION_STANDARDIZATION = 2,
  SP_CORRECTION_RANK = 3,
} SpCorrection;

// An embedding source: a static embedding file or a layer dump.
typedef struct SpSource SpSource;

// A feature direction with its provenance and correction statistics.
typedef struct SpVector SpVector;

// Scoring options. `pooling` and `correction` hold [`SpPooling`] and
// [`SpCorrection`] values. `layer < 0` means a static source; otherwise the
// layer (or the last layer of the aggregate `0..=layer` when `aggregate` is
// set).
typedef struct SpOptions {
  int32_t pooling;
  int32_t correction;
  int layer;
  bool aggregate;
  bool skip_oov;
} SpOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Mean pooling, no correction, static source.
struct SpOptions sp_options_default(void);

// Message of the last failing call on this thread, or null. Owned by the
// library; valid until the next failing call on the same thread.
const char *sp_last_error(void);

// Load a static embedding text file. `expected_dim` 0 accepts any.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum SpStatus sp_source_load_static(const char *path, size_t expected_dim, struct SpSource **out);

// Open a layered embedding dump.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum SpStatus sp_source_open_dump(const char *path, struct SpSource **out);

// Embedding dimension, or 0 for a null handle.
//
// # Safety
// `src` must be null or a live handle.
size_t sp_source_dim(const struct SpSource *src);

// # Safety
// `src` must be null or a handle not yet freed.
void sp_source_free(struct SpSource *src);

// Build a feature vector from a `low TAB high` seed file. `opts` may be
// null for the defaults.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum SpStatus sp_vector_build(const struct SpSource *src,
                              const char *seeds_path,
                              const char *feature,
                              const struct SpOptions *opts,
                              struct SpVector **out);

// Load a feature vector JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum SpStatus sp_vector_load(const char *path, struct SpVector **out);

// Write a feature vector as JSON.
//
// # Safety
// `vec` must be a live handle; `path` a NUL-terminated string.
enum SpStatus sp_vector_save(const struct SpVector *vec, const char *path);

// Dimension of the vector, or 0 for a null handle.
//
// # Safety
// `vec` must be null or a live handle.
size_t sp_vector_dim(const struct SpVector *vec);

// Copy the components into `buf`, which must hold `len >= dim` doubles.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum SpStatus sp_vector_values(const struct SpVector *vec, double *buf, size_t len);

// # Safety
// `vec` must be null or a handle not yet freed.
void sp_vector_free(struct SpVector *vec);

// Feature score of `text`. A null `opts` uses the settings stored with the
// vector.
//
// # Safety
// Pointers must be valid; `text` NUL-terminated.
enum SpStatus sp_score_text(const struct SpVector *vec,
                            const struct SpSource *src,
                            const char *text,
                            const struct SpOptions *opts,
                            double *out);

// Which text shows the feature more strongly: `*predicted` is 1 when
// `text1` scores strictly higher, else 0 (ties predict 0). `score0` and
// `score1` may be null.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum SpStatus sp_classify_pair(const struct SpVector *vec,
                               const struct SpSource *src,
                               const char *text0,
                               const char *text1,
                               const struct SpOptions *opts,
                               int *predicted,
                               double *score0,
                               double *score1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STYLEPROBE_H */
