#ifndef RADPAIR_H
#define RADPAIR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RP_APPROACH_HABERKORN 0

#define RP_APPROACH_MEASUREMENT 1

#define RP_COLUMN_TIME 0

#define RP_COLUMN_POP_S 1

#define RP_COLUMN_POP_T 2

#define RP_COLUMN_YIELD_S 3

#define RP_COLUMN_YIELD_T 4

#define RP_COLUMN_TRACE 5

#define RP_COLUMN_COHERENCE_ST 6

typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_INVALID_ARGUMENT = 2,
  // Input rejected by physical validation (non-Hermitian H, bad projector, invalid ρ0).
  RP_STATUS_PHYSICS = 3,
  // Numerical failure, e.g. an empty fit window or a singular solve.
  RP_STATUS_NUMERICAL = 4,
  RP_STATUS_PANIC = 5,
} RpStatus;

// Opaque handle to the result of one propagation.
typedef struct RpEvolution RpEvolution;

// Opaque spin system handle.
typedef struct RpSystem RpSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Two-level model with coupling `omega` in the (|S⟩, |T⟩) basis.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum RpStatus rp_system_two_level(double omega, struct RpSystem **out);

// System from a `dim × dim` Hamiltonian and singlet projector.
//
// # Safety
// `hamiltonian` and `q_singlet` must each point to `2·dim·dim` doubles;
// `out` must be writable.
enum RpStatus rp_system_from_matrices(size_t dim,
                                      const double *hamiltonian,
                                      const double *q_singlet,
                                      struct RpSystem **out);

// Hilbert-space dimension, or 0 for a null handle.
//
// # Safety
// `sys` must be null or a live handle from an `rp_system_*` constructor.
size_t rp_system_dim(const struct RpSystem *sys);

// # Safety
// `sys` must be null or a handle not yet freed.
void rp_system_free(struct RpSystem *sys);

// Propagates the singlet state `Q_S/Tr Q_S` over `times`.
//
// # Safety
// `sys` must be a live handle, `times` must point to `n_times` doubles and
// `out` must be writable.
enum RpStatus rp_evolve(const struct RpSystem *sys,
                        double k_s,
                        double k_t,
                        uint32_t approach_code,
                        const double *times,
                        size_t n_times,
                        struct RpEvolution **out);

// Number of time points, or 0 for a null handle.
//
// # Safety
// `evo` must be null or a live handle from [`rp_evolve`].
size_t rp_evolution_len(const struct RpEvolution *evo);

// Copies one `RP_COLUMN_*` series into `out`, which must hold `len` doubles
// with `len` equal to [`rp_evolution_len`].
//
// # Safety
// `evo` must be a live handle and `out` must point to `len` writable doubles.
enum RpStatus rp_evolution_column(const struct RpEvolution *evo,
                                  uint32_t column,
                                  double *out,
                                  size_t len);

// # Safety
// `evo` must be null or a handle not yet freed.
void rp_evolution_free(struct RpEvolution *evo);

// Single-exponential fit of `pop_s` over the samples in `[0.05, 0.5]`.
//
// # Safety
// `times` and `pop_s` must point to `n` doubles; `rate` and `r_squared`
// must be writable.
enum RpStatus rp_zeno_rate_fit(const double *times,
                               const double *pop_s,
                               size_t n,
                               double *rate,
                               double *r_squared);

// Max-norm residual of `W − V − ½k_S(Q_S⁻)² − ½k_T(Q_T⁻)²`.
//
// # Safety
// `sys` must be a live handle and `out` writable.
enum RpStatus rp_decoherence_gap_residual(const struct RpSystem *sys,
                                          double k_s,
                                          double k_t,
                                          double *out);

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next `rp_*` call on the same thread.
const char *rp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADPAIR_H */
