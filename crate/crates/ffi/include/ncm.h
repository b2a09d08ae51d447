#ifndef NCM_H
#define NCM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum NcmStatus {
  NCM_STATUS_OK = 0,
  // A null pointer, bad UTF-8 or an out-of-range value.
  NCM_STATUS_INVALID_ARGUMENT = 1,
  // Malformed graph text, CSV or JSON.
  NCM_STATUS_PARSE = 2,
  NCM_STATUS_IO = 3,
  // The computation itself failed.
  NCM_STATUS_RUNTIME = 4,
  // A bug in the library; the message has the details.
  NCM_STATUS_PANIC = 5,
} NcmStatus;

// A binary dataset.
typedef struct NcmDataset NcmDataset;

// A causal diagram.
typedef struct NcmGraph NcmGraph;

// A canonical structural model over binary variables.
typedef struct NcmScm NcmScm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The last error message on this thread, or null after a successful call.
// Release with [`ncm_string_free`].
char *ncm_last_error(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void ncm_string_free(char *s);

// Library version; a static string, do not free.
const char *ncm_version(void);

// Parse a diagram in the text format (`node A`, `A -> B`, `A <-> B` lines).
//
// # Safety
// `text` must be a NUL-terminated string; `graph` must point to writable storage.
enum NcmStatus ncm_graph_parse(const char *text, struct NcmGraph **graph);

// One of the benchmark diagrams by name, e.g. `"backdoor"` or `"iv"`.
//
// # Safety
// `name` must be a NUL-terminated string; `graph` must point to writable storage.
enum NcmStatus ncm_graph_fixture(const char *name, struct NcmGraph **graph);

// # Safety
// `graph` must be null or a handle from this library, not yet freed.
void ncm_graph_free(struct NcmGraph *graph);

// Number of variables, or 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle.
size_t ncm_graph_num_vars(const struct NcmGraph *graph);

// The diagram in the text format.
//
// # Safety
// `graph` must be a live handle; `text` must point to writable storage.
enum NcmStatus ncm_graph_to_text(const struct NcmGraph *graph, char **text);

// Symbolic identification of `P(outcome | do(treatment))`. On success
// `identified` is set, and `estimand` receives the closed form when there
// is one (null otherwise; free it with [`ncm_string_free`]).
//
// # Safety
// `graph` must be a live handle, the names NUL-terminated strings, and the
// out pointers writable.
enum NcmStatus ncm_symbolic_id(const struct NcmGraph *graph,
                               const char *treatment,
                               const char *outcome,
                               bool *identified,
                               char **estimand);

// A random canonical model on `graph`, reproducible from `seed`.
//
// # Safety
// `graph` must be a live handle; `scm` must point to writable storage.
enum NcmStatus ncm_scm_random(const struct NcmGraph *graph, uint64_t seed, struct NcmScm **scm);

// # Safety
// `scm` must be null or a handle from this library, not yet freed.
void ncm_scm_free(struct NcmScm *scm);

// Exact `P(outcome=1 | do(treatment=1)) - P(outcome=1 | do(treatment=0))`.
//
// # Safety
// `scm` must be a live handle, the names NUL-terminated strings, `ate` writable.
enum NcmStatus ncm_scm_ate(const struct NcmScm *scm,
                           const char *treatment,
                           const char *outcome,
                           double *ate);

// `n` observational samples.
//
// # Safety
// `scm` must be a live handle; `data` must point to writable storage.
enum NcmStatus ncm_scm_sample(const struct NcmScm *scm,
                              size_t n,
                              uint64_t seed,
                              struct NcmDataset **data);

// Read a CSV of 0/1 columns with a header row.
//
// # Safety
// `path` must be a NUL-terminated string; `data` must point to writable storage.
enum NcmStatus ncm_dataset_load(const char *path, struct NcmDataset **data);

// Write the dataset as CSV with its provenance sidecar.
//
// # Safety
// `data` must be a live handle and `path` a NUL-terminated string.
enum NcmStatus ncm_dataset_save(const struct NcmDataset *data, const char *path);

// # Safety
// `data` must be null or a handle from this library, not yet freed.
void ncm_dataset_free(struct NcmDataset *data);

// # Safety
// `data` must be null or a live handle.
size_t ncm_dataset_num_rows(const struct NcmDataset *data);

// # Safety
// `data` must be null or a live handle.
size_t ncm_dataset_num_vars(const struct NcmDataset *data);

// Decide identifiability from `len` max–min gaps against `tau`.
// `identifiable` receives 1 or 0.
//
// # Safety
// `gaps` must point to `len` readable doubles; `identifiable` must be writable.
enum NcmStatus ncm_gap_test(const double *gaps, size_t len, double tau, int32_t *identifiable);

// Neural identification of the ATE of `treatment` on `outcome`. `config_json`
// holds identification settings (null for the defaults); `report_json`
// receives the verdict report.
//
// # Safety
// Handles must be live, strings NUL-terminated or (for `config_json`) null,
// and `report_json` writable.
enum NcmStatus ncm_identify(const struct NcmDataset *data,
                            const struct NcmGraph *graph,
                            const char *treatment,
                            const char *outcome,
                            const char *config_json,
                            char **report_json);

// Likelihood-trained and naive estimates of the ATE. `config_json` holds
// training settings (null for the defaults); `report_json` receives the
// estimate report.
//
// # Safety
// As for [`ncm_identify`].
enum NcmStatus ncm_estimate(const struct NcmDataset *data,
                            const struct NcmGraph *graph,
                            const char *treatment,
                            const char *outcome,
                            const char *config_json,
                            char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCM_H */
