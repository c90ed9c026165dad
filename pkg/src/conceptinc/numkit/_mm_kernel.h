/* Fixed-order dense product: out[i][j] = sum_p a[i][p] * b[p][j], with p
 * accumulated strictly in increasing order from 0.0 for every element.
 * Register tiles change only which elements are in flight together, never
 * the per-element operation sequence, so results match a plain loop bitwise
 * when floating-point contraction is disabled. */
#ifndef CONCEPTINC_MM_KERNEL_H
#define CONCEPTINC_MM_KERNEL_H

#include <stddef.h>

#define TILE_R 4
#define TILE_C 8

typedef double vec4 __attribute__((vector_size(32)));

static inline vec4 load4(const double *p) {
    vec4 v;
    __builtin_memcpy(&v, p, sizeof v);
    return v;
}

static inline void store4(double *p, vec4 v) {
    __builtin_memcpy(p, &v, sizeof v);
}

static inline void tile_4x8(const double *a, const double *b, double *out,
                            ptrdiff_t k, ptrdiff_t n, ptrdiff_t i, ptrdiff_t j) {
    const vec4 zero = {0.0, 0.0, 0.0, 0.0};
    vec4 c00 = zero, c01 = zero, c10 = zero, c11 = zero;
    vec4 c20 = zero, c21 = zero, c30 = zero, c31 = zero;
    const double *a0 = a + i * k, *a1 = a0 + k, *a2 = a1 + k, *a3 = a2 + k;
    for (ptrdiff_t p = 0; p < k; p++) {
        const vec4 b0 = load4(b + p * n + j), b1 = load4(b + p * n + j + 4);
        c00 = c00 + a0[p] * b0; c01 = c01 + a0[p] * b1;
        c10 = c10 + a1[p] * b0; c11 = c11 + a1[p] * b1;
        c20 = c20 + a2[p] * b0; c21 = c21 + a2[p] * b1;
        c30 = c30 + a3[p] * b0; c31 = c31 + a3[p] * b1;
    }
    double *o = out + i * n + j;
    store4(o, c00); store4(o + 4, c01); o += n;
    store4(o, c10); store4(o + 4, c11); o += n;
    store4(o, c20); store4(o + 4, c21); o += n;
    store4(o, c30); store4(o + 4, c31);
}

static inline void tile_1x8(const double *a, const double *b, double *out,
                            ptrdiff_t k, ptrdiff_t n, ptrdiff_t i, ptrdiff_t j) {
    double c[TILE_C] = {0.0};
    for (ptrdiff_t p = 0; p < k; p++) {
        const double ar = a[i * k + p];
        const double *bp = b + p * n + j;
        for (int q = 0; q < TILE_C; q++)
            c[q] = c[q] + ar * bp[q];
    }
    for (int q = 0; q < TILE_C; q++)
        out[i * n + j + q] = c[q];
}

static inline void column_tail(const double *a, const double *b, double *out,
                               ptrdiff_t k, ptrdiff_t n, ptrdiff_t i, ptrdiff_t j0) {
    for (ptrdiff_t j = j0; j < n; j++) {
        double c = 0.0;
        for (ptrdiff_t p = 0; p < k; p++)
            c = c + a[i * k + p] * b[p * n + j];
        out[i * n + j] = c;
    }
}

static void fixed_order_mm(const double *a, const double *b, double *out,
                           ptrdiff_t m, ptrdiff_t k, ptrdiff_t n) {
    const ptrdiff_t n8 = n - n % TILE_C;
    ptrdiff_t i = 0;
    for (; i + TILE_R <= m; i += TILE_R) {
        for (ptrdiff_t j = 0; j < n8; j += TILE_C)
            tile_4x8(a, b, out, k, n, i, j);
        for (int r = 0; r < TILE_R; r++)
            column_tail(a, b, out, k, n, i + r, n8);
    }
    for (; i < m; i++) {
        for (ptrdiff_t j = 0; j < n8; j += TILE_C)
            tile_1x8(a, b, out, k, n, i, j);
        column_tail(a, b, out, k, n, i, n8);
    }
}

#endif
