#ifndef METIS_KIT_H
#define METIS_KIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MkKlDirection {
  /*
   `Σ Y_W ln(Y_W / Y_I)`.
   */
  MK_KL_DIRECTION_MASKED_FIRST = 0,
  /*
   `Σ Y_I ln(Y_I / Y_W)`.
   */
  MK_KL_DIRECTION_REFERENCE_FIRST = 1,
} MkKlDirection;

typedef enum MkStatus {
  MK_STATUS_OK = 0,
  MK_STATUS_NULL_ARGUMENT = 1,
  /*
   Shapes, lengths or values outside the function's domain.
   */
  MK_STATUS_INVALID_ARGUMENT = 2,
  /*
   Malformed JSON or a document that fails validation.
   */
  MK_STATUS_PARSE = 3,
  MK_STATUS_UTF8 = 4,
  MK_STATUS_PANIC = 5,
} MkStatus;

/*
 A hypergraph with its incidence matrix.
 */
typedef struct MkHypergraph MkHypergraph;

/*
 A distilled decision tree.
 */
typedef struct MkTree MkTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the most recent failure on this thread, or an empty string.
 The pointer stays valid until the next call into this library on the
 same thread.
 */
const char *mk_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *mk_version(void);

/*
 Release a string returned by this library.

 # Safety
 `s` must come from this library and not have been freed already.
 */
void mk_string_free(char *s);

/*
 Per-chunk streaming QoE: bitrate in Mbps minus rebuffer and smoothness
 penalties.
 */
double mk_qoe(double bitrate_kbps, double rebuffer_s, double prev_bitrate_kbps);

/*
 Parse a tree from its JSON form or from a `tree.json` artifact.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MkStatus mk_tree_from_json(const char *json, struct MkTree **out_tree);

/*
 # Safety
 `tree` must come from [`mk_tree_from_json`] and not have been freed.
 */
void mk_tree_free(struct MkTree *tree);

/*
 # Safety
 `tree` must be a live handle; `out_count` must be writable.
 */
enum MkStatus mk_tree_leaf_count(const struct MkTree *tree, size_t *out_count);

/*
 Smallest feature vector length the tree accepts; longer vectors are fine.

 # Safety
 `tree` must be a live handle; `out_count` must be writable.
 */
enum MkStatus mk_tree_n_features(const struct MkTree *tree, size_t *out_count);

/*
 Leaf value for one state: a class index for classification trees, the
 regression output otherwise.

 # Safety
 `features` must point to `len` doubles; `out_value` must be writable.
 */
enum MkStatus mk_tree_predict(const struct MkTree *tree,
                              const double *features,
                              size_t len,
                              double *out_value);

/*
 Graphviz rendering; release the string with [`mk_string_free`].

 # Safety
 `tree` must be a live handle; `out_dot` must be writable.
 */
enum MkStatus mk_tree_to_dot(const struct MkTree *tree, char **out_dot);

/*
 # Safety
 `json` must be a NUL-terminated string; `out_graph` must be writable.
 */
enum MkStatus mk_hypergraph_from_json(const char *json, struct MkHypergraph **out_graph);

/*
 The seven-node, two-demand routing example.

 # Safety
 `out_graph` must be writable.
 */
enum MkStatus mk_hypergraph_example(struct MkHypergraph **out_graph);

/*
 # Safety
 `graph` must come from this library and not have been freed.
 */
void mk_hypergraph_free(struct MkHypergraph *graph);

/*
 Hyperedge and vertex counts; masks are `n_edges × n_vertices`, row-major.

 # Safety
 `graph` must be a live handle; both outputs must be writable.
 */
enum MkStatus mk_hypergraph_shape(const struct MkHypergraph *graph,
                                  size_t *out_edges,
                                  size_t *out_vertices);

/*
 Copy the incidence matrix into `out_incidence` (`len` entries, row-major).

 # Safety
 `out_incidence` must point to `len` writable doubles.
 */
enum MkStatus mk_hypergraph_incidence(const struct MkHypergraph *graph,
                                      double *out_incidence,
                                      size_t len);

/*
 `W = I ⊙ σ(W′)`, written to `out_mask`.

 # Safety
 `w_prime` and `out_mask` must each point to `len` doubles.
 */
enum MkStatus mk_mask_gate(const struct MkHypergraph *graph,
                           const double *w_prime,
                           size_t len,
                           double *out_mask);

/*
 `Σ |W_ev|`.

 # Safety
 `w` must point to `len` doubles; `out_value` must be writable.
 */
enum MkStatus mk_mask_norm(const double *w, size_t len, double *out_value);

/*
 Binary entropy in nats summed over the connections of `graph`.

 # Safety
 `w` must point to `len` doubles; `out_value` must be writable.
 */
enum MkStatus mk_mask_entropy(const struct MkHypergraph *graph,
                              const double *w,
                              size_t len,
                              double *out_value);

/*
 KL divergence between stacked distributions. `segments` lists the size
 of each distribution and must cover `len` entries.

 # Safety
 `y_w` and `y_i` must point to `len` doubles, `segments` to `n_segments`
 sizes; `out_value` must be writable.
 */
enum MkStatus mk_divergence_discrete(const double *y_w,
                                     const double *y_i,
                                     size_t len,
                                     const size_t *segments,
                                     size_t n_segments,
                                     enum MkKlDirection direction,
                                     double *out_value);

/*
 Summed squared error between two real-valued outputs.

 # Safety
 `y_w` and `y_i` must point to `len` doubles; `out_value` must be writable.
 */
enum MkStatus mk_divergence_continuous(const double *y_w,
                                       const double *y_i,
                                       size_t len,
                                       double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METIS_KIT_H */
