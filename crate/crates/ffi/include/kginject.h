#ifndef KGINJECT_H
#define KGINJECT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KgiStatus {
  KGI_STATUS_OK = 0,
  KGI_STATUS_NULL_ARGUMENT = 1,
  KGI_STATUS_INVALID_UTF8 = 2,
  KGI_STATUS_IO = 3,
  KGI_STATUS_PARSE = 4,
  KGI_STATUS_INVALID_INPUT = 5,
  KGI_STATUS_SHAPE = 6,
  KGI_STATUS_CONFIG = 7,
  KGI_STATUS_SERIALIZATION = 8,
  KGI_STATUS_PANIC = 9,
} KgiStatus;

/*
 How a checkpoint consumes graph information at evaluation time.
 */
typedef enum KgiMode {
  KGI_MODE_PLAIN = 0,
  KGI_MODE_PIVOT = 1,
  KGI_MODE_MODIFIED_DEA = 2,
} KgiMode;

typedef struct KgiCorpus KgiCorpus;

typedef struct KgiGraph KgiGraph;

typedef struct KgiModel KgiModel;

/*
 Span-level exact-match scores.
 */
typedef struct KgiScores {
  size_t tp;
  size_t predicted;
  size_t gold;
  double precision;
  double recall;
  double f1;
} KgiScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *kgi_last_error(void);

/*
 Library version as a static string.
 */
const char *kgi_version(void);

/*
 Loads a five-column corpus TSV.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KgiStatus kgi_corpus_load(const char *path, struct KgiCorpus **out);

/*
 Number of sentences, or 0 for a null handle.

 # Safety
 `corpus` must be null or a live handle.
 */
size_t kgi_corpus_len(const struct KgiCorpus *corpus);

/*
 # Safety
 `corpus` must be null or a handle not yet freed.
 */
void kgi_corpus_free(struct KgiCorpus *corpus);

/*
 Builds a domain graph with default settings. `generator` may be null.

 # Safety
 Pointers must be valid; strings NUL-terminated.
 */
enum KgiStatus kgi_graph_build(const struct KgiCorpus *corpus,
                               const char *triples,
                               const char *embeddings,
                               const char *generator,
                               struct KgiGraph **out);

/*
 # Safety
 `path` must be NUL-terminated and `out` valid.
 */
enum KgiStatus kgi_graph_load(const char *path, struct KgiGraph **out);

/*
 # Safety
 `graph` must be a live handle and `path` NUL-terminated.
 */
enum KgiStatus kgi_graph_save(const struct KgiGraph *graph, const char *path);

/*
 Keeps the seeds plus `pct` percent of the other nodes.

 # Safety
 `graph` must be a live handle and `out` valid.
 */
enum KgiStatus kgi_graph_sample(const struct KgiGraph *graph,
                                double pct,
                                uint64_t seed,
                                struct KgiGraph **out);

/*
 Node count, or 0 for a null handle.

 # Safety
 `graph` must be null or a live handle.
 */
size_t kgi_graph_node_count(const struct KgiGraph *graph);

/*
 # Safety
 `graph` must be null or a handle not yet freed.
 */
void kgi_graph_free(struct KgiGraph *graph);

/*
 Writes the corpus with pivots after every graph match as a six-column TSV.

 # Safety
 Handles must be live and `path` NUL-terminated.
 */
enum KgiStatus kgi_enrich(const struct KgiCorpus *corpus,
                          const struct KgiGraph *graph,
                          const char *path);

/*
 # Safety
 `path` must be NUL-terminated and `out` valid.
 */
enum KgiStatus kgi_model_load(const char *path, struct KgiModel **out);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void kgi_model_free(struct KgiModel *model);

/*
 Scores the tagger that labels exactly the graph-matched spans.

 # Safety
 Handles must be live and `out` valid.
 */
enum KgiStatus kgi_eval_graph_only(const struct KgiCorpus *corpus,
                                   const struct KgiGraph *graph,
                                   struct KgiScores *out);

/*
 Scores a checkpoint. `graph` may be null only for `KGI_MODE_PLAIN`.

 # Safety
 Handles must be live (or null where allowed) and `out` valid.
 */
enum KgiStatus kgi_eval_model(const struct KgiModel *model,
                              const struct KgiCorpus *corpus,
                              const struct KgiGraph *graph,
                              enum KgiMode mode,
                              struct KgiScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGINJECT_H */
