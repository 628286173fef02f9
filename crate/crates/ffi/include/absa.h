#ifndef ABSA_H
#define ABSA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Report layout for [`absa_matrix_run`].
typedef enum AbsaFormat {
  ABSA_FORMAT_JSON = 0,
  ABSA_FORMAT_CSV = 1,
  ABSA_FORMAT_TABLE = 2,
} AbsaFormat;

typedef enum AbsaPolarity {
  ABSA_POLARITY_POSITIVE = 0,
  ABSA_POLARITY_NEGATIVE = 1,
  ABSA_POLARITY_NEUTRAL = 2,
} AbsaPolarity;

typedef enum AbsaStatus {
  ABSA_STATUS_OK = 0,
  ABSA_STATUS_NULL_POINTER = 1,
  ABSA_STATUS_INVALID_UTF8 = 2,
  ABSA_STATUS_INVALID_ARGUMENT = 3,
  ABSA_STATUS_IO = 4,
  ABSA_STATUS_PARSE = 5,
  ABSA_STATUS_MODEL = 6,
  ABSA_STATUS_EVAL = 7,
  ABSA_STATUS_PANIC = 8,
} AbsaStatus;

// A parsed annotated corpus.
typedef struct AbsaDataset AbsaDataset;

// A trained polarity classifier.
typedef struct AbsaModel AbsaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into the library on the same thread.
const char *absa_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *absa_version(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void absa_string_free(char *s);

// Parses SemEval XML held in memory.
//
// # Safety
// `xml` and `domain_name` must be NUL-terminated strings; `out` must be writable.
enum AbsaStatus absa_dataset_parse(const char *xml,
                                   const char *domain_name,
                                   struct AbsaDataset **out);

// Reads and parses a SemEval XML file.
//
// # Safety
// `path` and `domain_name` must be NUL-terminated strings; `out` must be writable.
enum AbsaStatus absa_dataset_load(const char *path,
                                  const char *domain_name,
                                  struct AbsaDataset **out);

// # Safety
// `ds` must be null or a handle from this library, not yet freed.
void absa_dataset_free(struct AbsaDataset *ds);

// # Safety
// `ds` must be a live handle; the out pointers must be writable.
enum AbsaStatus absa_dataset_counts(const struct AbsaDataset *ds,
                                    size_t *sentences,
                                    size_t *opinions);

// Canonical XML serialization of a dataset.
//
// # Safety
// `ds` must be a live handle; `out` must be writable.
enum AbsaStatus absa_dataset_serialize(const struct AbsaDataset *ds, char **out);

// Trains a classifier on every gold opinion of `ds`. With a null
// `config_path` the default naive Bayes settings and seed 0 are used.
//
// # Safety
// `ds` must be a live handle, `config_path` null or a NUL-terminated string,
// `out` writable.
enum AbsaStatus absa_model_train(const struct AbsaDataset *ds,
                                 const char *config_path,
                                 struct AbsaModel **out);

// Restores a model from the JSON written by [`absa_model_to_json`].
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum AbsaStatus absa_model_from_json(const char *json, struct AbsaModel **out);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum AbsaStatus absa_model_to_json(const struct AbsaModel *model, char **out);

// # Safety
// `model` must be null or a handle from this library, not yet freed.
void absa_model_free(struct AbsaModel *model);

// Polarity of the aspect at character offsets `[from, to)` of `sentence`.
// A negative `from` means the aspect is implicit and the whole sentence is
// used.
//
// # Safety
// `model` must be a live handle, `sentence` a NUL-terminated string and
// `out` writable.
enum AbsaStatus absa_model_predict(const struct AbsaModel *model,
                                   const char *sentence,
                                   int64_t from,
                                   int64_t to,
                                   enum AbsaPolarity *out);

// Gold-aspect polarity accuracy and macro-F1 of `model` on `ds`.
//
// # Safety
// Both handles must be live; the out pointers must be writable.
enum AbsaStatus absa_model_evaluate(const struct AbsaModel *model,
                                    const struct AbsaDataset *ds,
                                    double *accuracy,
                                    double *macro_f1_out);

// Runs the evaluation matrix described by a config file and returns the
// report text.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out` must be writable.
enum AbsaStatus absa_matrix_run(const char *config_path, enum AbsaFormat format, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABSA_H */
