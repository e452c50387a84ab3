#ifndef NHLD_H
#define NHLD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Routing-cost choice for [`nhld_ldp_new`].
#define NHLD_COST_U0 0

#define NHLD_COST_T0 1

typedef enum NhldBlockClass {
  NHLD_BLOCK_CLASS_DEGENERATE_TRANSIENT = 0,
  NHLD_BLOCK_CLASS_NONDEGENERATE_TRANSIENT = 1,
  NHLD_BLOCK_CLASS_STOCHASTIC = 2,
} NhldBlockClass;

typedef enum NhldStatus {
  NHLD_STATUS_OK = 0,
  NHLD_STATUS_INVALID_SPEC = 1,
  NHLD_STATUS_NOT_CONVERGED = 2,
  NHLD_STATUS_BUDGET_EXCEEDED = 3,
  NHLD_STATUS_NULL_POINTER = 4,
  NHLD_STATUS_INVALID_ARGUMENT = 5,
  NHLD_STATUS_PANIC = 6,
} NhldStatus;

typedef struct NhldChain NhldChain;

typedef struct NhldDecomposition NhldDecomposition;

typedef struct NhldLdp NhldLdp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; valid until the next call.
const char *nhld_last_error_message(void);

// Parses a chain document.
//
// # Safety
// `spec` must be a NUL-terminated string and `out` a writable pointer.
enum NhldStatus nhld_chain_from_str(const char *spec, struct NhldChain **out);

// Loads a compiled-in chain (`s3-metropolis`, `s12-1`, `s12-2`, `s12-3`).
//
// # Safety
// `name` must be a NUL-terminated string and `out` a writable pointer.
enum NhldStatus nhld_chain_from_fixture(const char *name, struct NhldChain **out);

// # Safety
// `chain` must come from this library or be null.
void nhld_chain_free(struct NhldChain *chain);

// # Safety
// Pointers must be valid.
enum NhldStatus nhld_chain_num_states(const struct NhldChain *chain, size_t *out);

// # Safety
// Pointers must be valid.
enum NhldStatus nhld_chain_dim(const struct NhldChain *chain, size_t *out);

// Canonical decomposition of the limit kernel.
//
// # Safety
// Pointers must be valid.
enum NhldStatus nhld_decompose(const struct NhldChain *chain, struct NhldDecomposition **out);

// # Safety
// `dec` must come from this library or be null.
void nhld_decomposition_free(struct NhldDecomposition *dec);

// # Safety
// Pointers must be valid.
enum NhldStatus nhld_decomposition_num_blocks(const struct NhldDecomposition *dec, size_t *out);

// # Safety
// Pointers must be valid.
enum NhldStatus nhld_decomposition_block_class(const struct NhldDecomposition *dec,
                                               size_t block,
                                               enum NhldBlockClass *out);

// Copies the 0-based states of `block` into `buf` (capacity `cap`) and
// stores the block size in `len`. With too small a buffer only `len` is
// written and the call fails with `InvalidArgument`.
//
// # Safety
// `buf` must hold `cap` elements; other pointers must be valid.
enum NhldStatus nhld_decomposition_block_states(const struct NhldDecomposition *dec,
                                                size_t block,
                                                size_t *buf,
                                                size_t cap,
                                                size_t *len);

// Composite rate with routing costs `U₀` (`NHLD_COST_U0`) or `T₀`.
//
// # Safety
// Pointers must be valid.
enum NhldStatus nhld_ldp_new(const struct NhldChain *chain,
                             int32_t cost,
                             uint64_t window,
                             struct NhldLdp **out);

// # Safety
// `ldp` must come from this library or be null.
void nhld_ldp_free(struct NhldLdp *ldp);

// Number of blocks in `G`.
//
// # Safety
// Pointers must be valid.
enum NhldStatus nhld_ldp_num_blocks(const struct NhldLdp *ldp, size_t *out);

// `J(z)` for `z` of length `d`; `+inf` off the domain.
//
// # Safety
// `z` must hold `d` values; other pointers must be valid.
enum NhldStatus nhld_ldp_eval(const struct NhldLdp *ldp, const double *z, size_t d, double *out);

// Rate `I(x)` of the `block`-th member of `G`.
//
// # Safety
// `x` must hold `d` values; other pointers must be valid.
enum NhldStatus nhld_ldp_block_rate(const struct NhldLdp *ldp,
                                    size_t block,
                                    const double *x,
                                    size_t d,
                                    double *out);

// Exact `log P(Zₙ ∈ I)` for an interval with endpoints `lo ≤ hi`.
// `budget` caps the sweep size in cells; 0 means the default.
//
// # Safety
// Pointers must be valid.
enum NhldStatus nhld_oracle_log_prob(const struct NhldChain *chain,
                                     uint64_t n,
                                     double lo,
                                     double hi,
                                     bool lo_closed,
                                     bool hi_closed,
                                     uint64_t budget,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NHLD_H */
