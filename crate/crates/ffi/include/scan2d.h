#ifndef SCAN2D_H
#define SCAN2D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Arithmetic precision of a forward run.
 */
typedef enum Scan2dDtype {
  SCAN2D_DTYPE_F32 = 0,
  SCAN2D_DTYPE_F64 = 1,
} Scan2dDtype;

typedef enum Scan2dPaddingScheme {
  SCAN2D_PADDING_SCHEME_FULL_ROW_SCAN = 0,
  SCAN2D_PADDING_SCHEME_SEGMENTED = 1,
} Scan2dPaddingScheme;

typedef enum Scan2dScanKind {
  SCAN2D_SCAN_KIND_ROW_MAJOR1D = 0,
  SCAN2D_SCAN_KIND_GRID2D = 1,
} Scan2dScanKind;

/**
 * Result of every call.
 */
typedef enum Scan2dStatus {
  SCAN2D_STATUS_OK = 0,
  SCAN2D_STATUS_NULL_POINTER = 1,
  SCAN2D_STATUS_INVALID_ARGUMENT = 2,
  SCAN2D_STATUS_SHAPE_MISMATCH = 3,
  SCAN2D_STATUS_NON_FINITE = 4,
  SCAN2D_STATUS_IO = 5,
  SCAN2D_STATUS_FORMAT = 6,
  SCAN2D_STATUS_BUFFER_TOO_SMALL = 7,
  SCAN2D_STATUS_PANIC = 8,
} Scan2dStatus;

/**
 * Forward implementation to run.
 */
typedef enum Scan2dVariant {
  SCAN2D_VARIANT_SEQ1D = 0,
  SCAN2D_VARIANT_SEQ2D = 1,
  SCAN2D_VARIANT_CUB1D = 2,
  SCAN2D_VARIANT_NAIVE2D = 3,
  SCAN2D_VARIANT_TILED2D = 4,
} Scan2dVariant;

/**
 * One scan instance in double precision.
 */
typedef struct Scan2dProblem Scan2dProblem;

/**
 * Modeled main-store traffic of one forward pass, in elements.
 */
typedef struct Scan2dMemReport {
  uint64_t payload_reads;
  uint64_t payload_writes;
  uint64_t intermediate_traffic;
  uint64_t carry_traffic;
  uint64_t padding_elements;
  uint64_t flops;
} Scan2dMemReport;

typedef struct Scan2dPaddingWaste {
  double pad_per_row;
  double pad_per_column;
  double waste_fraction;
} Scan2dPaddingWaste;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, nul-terminated library version.
 */
const char *scan2d_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always nul-terminated when `cap > 0`) and returns the full message length
 * without the terminator. Returns 0 when no error has been recorded.
 *
 * # Safety
 * `buf` is null or valid for `cap` writes.
 */
size_t scan2d_last_error(char *buf, size_t cap);

/**
 * Builds a problem from caller arrays, copied on entry.
 *
 * `x` and `z_raw` hold `height·width` values; `b` and `c` hold `state_dim`
 * planes of `height·width` values each; `a` holds `state_dim` values.
 *
 * # Safety
 * Every pointer is null or valid for the reads described above; `out` is
 * null or valid for one write.
 */
enum Scan2dStatus scan2d_problem_new(size_t height,
                                     size_t width,
                                     size_t state_dim,
                                     const double *x,
                                     const double *z_raw,
                                     const double *b,
                                     const double *c,
                                     const double *a,
                                     double skip,
                                     double bias,
                                     struct Scan2dProblem **out);

/**
 * Seeded random problem with `A` in `(−1, 0)` and unit-normal inputs.
 *
 * # Safety
 * `out` is null or valid for one write.
 */
enum Scan2dStatus scan2d_problem_random(size_t height,
                                        size_t width,
                                        size_t state_dim,
                                        uint64_t seed,
                                        struct Scan2dProblem **out);

/**
 * Reads a problem from an input tensor file and a parameter bundle, both in
 * the crate's binary tensor format. Single-precision files are widened.
 *
 * # Safety
 * Both paths are null or nul-terminated strings; `out` is null or valid for
 * one write.
 */
enum Scan2dStatus scan2d_problem_load(const char *input_path,
                                      const char *params_path,
                                      struct Scan2dProblem **out);

/**
 * Releases a problem. Null is ignored.
 *
 * # Safety
 * `problem` is null or came from a `scan2d_problem_*` constructor and has
 * not been freed.
 */
void scan2d_problem_free(struct Scan2dProblem *problem);

/**
 * Writes the problem's height, width and state count. Any output pointer
 * may be null.
 *
 * # Safety
 * `problem` is null or a live handle; each output is null or valid for one
 * write.
 */
enum Scan2dStatus scan2d_problem_dims(const struct Scan2dProblem *problem,
                                      size_t *height,
                                      size_t *width,
                                      size_t *state_dim);

/**
 * Runs one forward pass and writes `y` (`height·width` values, row-major)
 * to `y_out`. `tile` is only read by the tiled variant; `threads` of 0 or 1
 * runs on the calling thread. Under `SCAN2D_DTYPE_F32` the problem is
 * narrowed first and the output widened back.
 *
 * # Safety
 * `problem` is null or a live handle; `y_out` is null or valid for `y_len`
 * writes.
 */
enum Scan2dStatus scan2d_forward(const struct Scan2dProblem *problem,
                                 enum Scan2dVariant which,
                                 enum Scan2dDtype dtype,
                                 size_t tile,
                                 size_t threads,
                                 double *y_out,
                                 size_t y_len);

/**
 * Closed-form traffic of `variant` (`0` = cub1d, `1` = naive2d,
 * `2` = tiled2d) for an `H×W` grid with `N` states. `tile` is only read by
 * tiled2d.
 *
 * # Safety
 * `out` is null or valid for one write.
 */
enum Scan2dStatus scan2d_simulate_traffic(uint32_t variant,
                                          size_t height,
                                          size_t width,
                                          size_t state_dim,
                                          size_t tile,
                                          struct Scan2dMemReport *out);

/**
 * Identity-padding cost of a row pass plus a column pass.
 *
 * # Safety
 * `out` is null or valid for one write.
 */
enum Scan2dStatus scan2d_padding_waste(size_t height,
                                       size_t width,
                                       size_t granularity,
                                       enum Scan2dPaddingScheme scheme,
                                       struct Scan2dPaddingWaste *out);

/**
 * Weight of a unit impulse at `(src_row, src_col)` in the state at
 * `(dst_row, dst_col)` under constant `Ā = a_bar`.
 *
 * # Safety
 * `out` is null or valid for one write.
 */
enum Scan2dStatus scan2d_impulse_coefficient(enum Scan2dScanKind kind,
                                             size_t width,
                                             double a_bar,
                                             size_t src_row,
                                             size_t src_col,
                                             size_t dst_row,
                                             size_t dst_col,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCAN2D_H */
