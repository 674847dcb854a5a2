#ifndef HYPERFAST_H
#define HYPERFAST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HfStatus {
  HF_STATUS_OK = 0,
  // A parameter or the grid was rejected before any work was done.
  HF_STATUS_INVALID_ARGUMENT = 1,
  HF_STATUS_NULL_POINTER = 2,
  // A solver ran but failed (no bracket, Newton divergence, step collapse...).
  HF_STATUS_NUMERICAL = 3,
  // The caller's buffer is shorter than the data; nothing was written.
  HF_STATUS_BUFFER_TOO_SMALL = 4,
  HF_STATUS_INDEX_OUT_OF_RANGE = 5,
  HF_STATUS_PANIC = 6,
} HfStatus;

// Ground-state profile V of −ΔV = cV^{1/m}.
typedef struct HfProfile HfProfile;

// Output of a physical-time evolution.
typedef struct HfTrajectory HfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message including its NUL, or 0 if the
// last call on this thread succeeded.
size_t hf_last_error_length(void);

// Copies the last error message (NUL-terminated) into `buf`.
//
// # Safety
// `buf` must point to `len` writable bytes.
enum HfStatus hf_last_error_message(char *buf, size_t len);

// Static description of a status code. Never null; do not free.
const char *hf_status_string(enum HfStatus status);

// Critical exponent (N−2)/(N+2) below which the ground state does not exist.
double hf_critical_exponent(uint32_t dim);

// Ground state for coupling `c`. On success `*out` owns a new handle.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HfStatus hf_profile_ground_state(double c, double m, uint32_t dim, struct HfProfile **out);

// Profile whose separable solution (1 − t/T)^{1/(1−m)} V^{1/m} vanishes at T.
//
// # Safety
// As [`hf_profile_ground_state`].
enum HfStatus hf_profile_for_extinction_time(double big_t,
                                             double m,
                                             uint32_t dim,
                                             struct HfProfile **out);

// V(r) and V′(r); either output may be null.
//
// # Safety
// `profile` must be a live handle; non-null outputs must be writable.
enum HfStatus hf_profile_eval(const struct HfProfile *profile, double r, double *v, double *dv);

// V(0).
//
// # Safety
// `profile` must be a live handle and `out` writable.
enum HfStatus hf_profile_amplitude(const struct HfProfile *profile, double *out);

// The limit of e^{(N−1)r}V(r).
//
// # Safety
// `profile` must be a live handle and `out` writable.
enum HfStatus hf_profile_tail_constant(const struct HfProfile *profile, double *out);

// # Safety
// `profile` must be null or a handle not yet freed.
void hf_profile_free(struct HfProfile *profile);

// Writes the `intervals + 1` nodes of the uniform grid on [0, radius].
//
// # Safety
// `nodes` must point to `len` writable doubles.
enum HfStatus hf_uniform_grid_nodes(uint32_t dim,
                                    double radius,
                                    size_t intervals,
                                    double *nodes,
                                    size_t len);

// Evolves `u0` (sampled on the uniform grid of `intervals` cells) to `t_end`,
// keeping a snapshot at each of the `n_outputs` requested times as well as
// the initial and final states. `outputs` may be null when `n_outputs` is 0.
//
// # Safety
// `u0` must point to `intervals + 1` readable doubles, `outputs` to
// `n_outputs` readable doubles, and `out` to writable handle storage.
enum HfStatus hf_evolve(uint32_t dim,
                        double m,
                        double radius,
                        size_t intervals,
                        const double *u0,
                        double t_end,
                        const double *outputs,
                        size_t n_outputs,
                        struct HfTrajectory **out);

// Number of stored snapshots.
//
// # Safety
// `traj` must be a live handle and `out` writable.
enum HfStatus hf_trajectory_snapshot_count(const struct HfTrajectory *traj, size_t *out);

// Copies snapshot `index` into `values` and its time into `*t`.
//
// # Safety
// `traj` must be a live handle, `t` writable and `values` must point to
// `len` writable doubles.
enum HfStatus hf_trajectory_snapshot(const struct HfTrajectory *traj,
                                     size_t index,
                                     double *t,
                                     double *values,
                                     size_t len);

// Extinction time fitted from the recorded E(t) series; meaningful for
// runs continued to (near) extinction.
//
// # Safety
// `traj` must be a live handle and `out` writable.
enum HfStatus hf_trajectory_extinction_time(const struct HfTrajectory *traj, double *out);

// # Safety
// `traj` must be null or a handle not yet freed.
void hf_trajectory_free(struct HfTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERFAST_H */
