/*
 * Dense product c = a @ b with a fixed per-element accumulation order.
 *
 * Every output element is computed as ((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...
 * with each product and each sum rounded separately, which is exactly what a
 * naive triple loop produces.  Vectorisation runs across output columns only,
 * so the AVX2 path and the scalar path give identical bits.
 *
 * a may be strided (lets callers pass transposed views); b and c are row-major.
 */
#ifndef LATTICE_RNN_FIXED_MATMUL_H
#define LATTICE_RNN_FIXED_MATMUL_H

#include <stddef.h>
#ifdef __AVX2__
#include <immintrin.h>
#endif

static void mm_fixed(const double *a, ptrdiff_t a_rs, ptrdiff_t a_cs,
                     const double *b, ptrdiff_t ldb,
                     double *c, ptrdiff_t ldc,
                     ptrdiff_t p, ptrdiff_t q, ptrdiff_t r)
{
    ptrdiff_t i = 0, j, k;
#ifdef __AVX2__
    for (; i + 4 <= p; i += 4) {
        const double *a0 = a + (i + 0) * a_rs;
        const double *a1 = a + (i + 1) * a_rs;
        const double *a2 = a + (i + 2) * a_rs;
        const double *a3 = a + (i + 3) * a_rs;
        for (j = 0; j + 8 <= r; j += 8) {
            __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
            __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
            __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
            __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
            for (k = 0; k < q; ++k) {
                const double *bk = b + k * ldb + j;
                __m256d b0 = _mm256_loadu_pd(bk), b1 = _mm256_loadu_pd(bk + 4);
                __m256d s;
                s = _mm256_broadcast_sd(a0 + k * a_cs);
                c00 = _mm256_add_pd(c00, _mm256_mul_pd(s, b0));
                c01 = _mm256_add_pd(c01, _mm256_mul_pd(s, b1));
                s = _mm256_broadcast_sd(a1 + k * a_cs);
                c10 = _mm256_add_pd(c10, _mm256_mul_pd(s, b0));
                c11 = _mm256_add_pd(c11, _mm256_mul_pd(s, b1));
                s = _mm256_broadcast_sd(a2 + k * a_cs);
                c20 = _mm256_add_pd(c20, _mm256_mul_pd(s, b0));
                c21 = _mm256_add_pd(c21, _mm256_mul_pd(s, b1));
                s = _mm256_broadcast_sd(a3 + k * a_cs);
                c30 = _mm256_add_pd(c30, _mm256_mul_pd(s, b0));
                c31 = _mm256_add_pd(c31, _mm256_mul_pd(s, b1));
            }
            double *ci = c + i * ldc + j;
            _mm256_storeu_pd(ci, c00); _mm256_storeu_pd(ci + 4, c01); ci += ldc;
            _mm256_storeu_pd(ci, c10); _mm256_storeu_pd(ci + 4, c11); ci += ldc;
            _mm256_storeu_pd(ci, c20); _mm256_storeu_pd(ci + 4, c21); ci += ldc;
            _mm256_storeu_pd(ci, c30); _mm256_storeu_pd(ci + 4, c31);
        }
        /* column tail: four independent accumulation chains per column */
        for (; j < r; ++j) {
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (k = 0; k < q; ++k) {
                double bkj = b[k * ldb + j];
                s0 = s0 + a0[k * a_cs] * bkj;
                s1 = s1 + a1[k * a_cs] * bkj;
                s2 = s2 + a2[k * a_cs] * bkj;
                s3 = s3 + a3[k * a_cs] * bkj;
            }
            c[(i + 0) * ldc + j] = s0;
            c[(i + 1) * ldc + j] = s1;
            c[(i + 2) * ldc + j] = s2;
            c[(i + 3) * ldc + j] = s3;
        }
    }
#endif
    if (r < 8) {
        /* narrow right operand (matrix-vector products): interleave rows */
        for (; i + 4 <= p; i += 4) {
            for (j = 0; j < r; ++j) {
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                for (k = 0; k < q; ++k) {
                    double bkj = b[k * ldb + j];
                    s0 = s0 + a[(i + 0) * a_rs + k * a_cs] * bkj;
                    s1 = s1 + a[(i + 1) * a_rs + k * a_cs] * bkj;
                    s2 = s2 + a[(i + 2) * a_rs + k * a_cs] * bkj;
                    s3 = s3 + a[(i + 3) * a_rs + k * a_cs] * bkj;
                }
                c[(i + 0) * ldc + j] = s0;
                c[(i + 1) * ldc + j] = s1;
                c[(i + 2) * ldc + j] = s2;
                c[(i + 3) * ldc + j] = s3;
            }
        }
    }
    for (; i < p; ++i) {
        double *ci = c + i * ldc;
        for (j = 0; j < r; ++j)
            ci[j] = 0.0;
        for (k = 0; k < q; ++k) {
            double s = a[i * a_rs + k * a_cs];
            const double *bk = b + k * ldb;
            for (j = 0; j < r; ++j)
                ci[j] = ci[j] + s * bk[j];
        }
    }
}

#endif
