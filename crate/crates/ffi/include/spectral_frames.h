#ifndef SPECTRAL_FRAMES_H
#define SPECTRAL_FRAMES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_FACTORIZATION = 3,
  SF_STATUS_NUMERICAL = 4,
  SF_STATUS_IO = 5,
  SF_STATUS_BUFFER_TOO_SMALL = 6,
  SF_STATUS_PANIC = 7,
} SfStatus;

/*
 Extended frames on a grid.
 */
typedef struct SfFrameField SfFrameField;

/*
 Equivariant map into a Grassmannian.
 */
typedef struct SfGrassmannMap SfGrassmannMap;

/*
 Quad mesh from the Sym-Bobenko formula.
 */
typedef struct SfMesh SfMesh;

/*
 Rectangle `[x_min, x_max] x [y_min, y_max]` sampled at `nx * ny` points, row-major in `y`.
 */
typedef struct SfGrid {
  double x_min;
  double x_max;
  double y_min;
  double y_max;
  size_t nx;
  size_t ny;
} SfGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failure on this thread; valid until the next failing call.
 */
const char *sf_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/*
 Real nodes of the bubbleton with lobe counts `p[0..len]`; writes `len - 1` values.

 # Safety
 `p` must point to `len` values and `out` to `cap` writable doubles.
 */
enum SfStatus sf_bubbleton_nodes(const uint32_t *p, size_t len, double *out, size_t cap);

/*
 Symes frames for branch points given as `2 * genus` doubles `(re, im, re, im, ...)`.

 # Safety
 `branch_points` must point to `2 * genus` doubles, `grid` and `out` must be valid pointers.
 */
enum SfStatus sf_frames_symes(const double *branch_points,
                              size_t genus,
                              const struct SfGrid *grid,
                              size_t n_zeta,
                              size_t window,
                              struct SfFrameField **out);

/*
 Frames by dressing the vacuum; `epsilon <= 0` selects the default radius.

 # Safety
 As for [`sf_frames_symes`].
 */
enum SfStatus sf_frames_dress(const double *branch_points,
                              size_t genus,
                              const struct SfGrid *grid,
                              double epsilon,
                              size_t n_zeta,
                              size_t window,
                              struct SfFrameField **out);

/*
 Bubbleton frames for lobe counts `p[0..len]`.

 # Safety
 `p` must point to `len` values; `grid` and `out` must be valid pointers.
 */
enum SfStatus sf_frames_bubbleton(const uint32_t *p,
                                  size_t len,
                                  const struct SfGrid *grid,
                                  size_t n_zeta,
                                  struct SfFrameField **out);

/*
 Number of grid points and of circle samples.

 # Safety
 `field` must come from one of the `sf_frames_*` constructors.
 */
enum SfStatus sf_frames_shape(const struct SfFrameField *field, size_t *n_points, size_t *n_zeta);

/*
 Frame at grid point `point` and circle sample `k` as 8 doubles `(re, im)` in row-major order.

 # Safety
 `field` must be valid and `out` must hold 8 doubles.
 */
enum SfStatus sf_frames_get(const struct SfFrameField *field, size_t point, size_t k, double *out);

/*
 Largest unitarity defect over all stored frames.

 # Safety
 `field` and `out` must be valid pointers.
 */
enum SfStatus sf_frames_unitarity_defect(const struct SfFrameField *field, double *out);

/*
 Largest discrete flatness defect over all circle samples.

 # Safety
 `field` and `out` must be valid pointers.
 */
enum SfStatus sf_frames_flatness_residual(const struct SfFrameField *field, double *out);

/*
 Gauss map as `3 * n_points` doubles.

 # Safety
 `field` must be valid and `out` must hold `cap` doubles.
 */
enum SfStatus sf_frames_gauss_map(const struct SfFrameField *field, double *out, size_t cap);

/*
 # Safety
 `field` must come from an `sf_frames_*` constructor and not be used afterwards. Null is ignored.
 */
void sf_frames_free(struct SfFrameField *field);

/*
 Sym-Bobenko immersion at `zeta0 = (zeta_re, zeta_im)` with mean curvature `h`.

 # Safety
 `field` and `out` must be valid pointers.
 */
enum SfStatus sf_mesh_sym_bobenko(const struct SfFrameField *field,
                                  double zeta_re,
                                  double zeta_im,
                                  double h,
                                  struct SfMesh **out);

/*
 Vertex positions as `3 * n_vertices` doubles; `n_vertices` receives the count.

 # Safety
 `mesh` must be valid, `out` must hold `cap` doubles and `n_vertices` must be writable.
 */
enum SfStatus sf_mesh_vertices(const struct SfMesh *mesh,
                               double *out,
                               size_t cap,
                               size_t *n_vertices);

/*
 Writes the mesh as OBJ, or PLY when `path` ends in `.ply`.

 # Safety
 `mesh` must be valid and `path` a NUL-terminated UTF-8 string.
 */
enum SfStatus sf_mesh_export(const struct SfMesh *mesh, const char *path);

/*
 # Safety
 `mesh` must come from [`sf_mesh_sym_bobenko`] and not be used afterwards. Null is ignored.
 */
void sf_mesh_free(struct SfMesh *mesh);

/*
 Grassmannian map from `k` double points and `m` simple points (pairs of doubles each).

 # Safety
 `double_points` must hold `2 * k` doubles, `simple_points` `2 * m`, and `out` must be writable.
 */
enum SfStatus sf_grassmann_new(const double *double_points,
                               size_t k,
                               const double *simple_points,
                               size_t m,
                               struct SfGrassmannMap **out);

/*
 `k` and `n` of a map into `Gr_k(C^{n+1})`.

 # Safety
 All pointers must be valid.
 */
enum SfStatus sf_grassmann_dims(const struct SfGrassmannMap *map, size_t *k, size_t *n);

/*
 Orthogonal projection onto the plane at `z` (`2k` doubles) as `2 (n+1)^2` doubles, row-major
 `(re, im)` pairs.

 # Safety
 `map` must be valid, `z` must hold `2k` doubles and `out` `cap` doubles.
 */
enum SfStatus sf_grassmann_projection(const struct SfGrassmannMap *map,
                                      const double *z,
                                      double *out,
                                      size_t cap);

/*
 Harmonicity residual along the complex line `t -> t a` with `a` given as `2k` doubles.

 # Safety
 All pointers must be valid; `direction` must hold `2k` doubles.
 */
enum SfStatus sf_grassmann_harmonicity(const struct SfGrassmannMap *map,
                                       const double *direction,
                                       const struct SfGrid *grid,
                                       double *out);

/*
 # Safety
 `map` must come from [`sf_grassmann_new`] and not be used afterwards. Null is ignored.
 */
void sf_grassmann_free(struct SfGrassmannMap *map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRAL_FRAMES_H */
