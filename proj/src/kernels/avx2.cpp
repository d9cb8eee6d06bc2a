// SPDX-License-Identifier: Apache-2.0
//
// AVX2 kernels. matmul_ab / matmul_atb broadcast one left-hand element and
// stream the right-hand row through 8-float (4-double) lanes, which keeps
// the per-element accumulation order identical to the scalar reference.
// Explicit mul+add is used instead of FMA (and the TU is compiled with
// -mno-fma -ffp-contract=off) so both lanes round identically.
//
// matmul_abt reduces a dot product across lanes and then sums the lanes
// left to right; it agrees with the scalar lane up to rounding only.

#include "loralab/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define LORALAB_HAVE_AVX2_LANE 1
#include <immintrin.h>
#else
#define LORALAB_HAVE_AVX2_LANE 0
#endif

namespace loralab::kern::avx2 {

#if LORALAB_HAVE_AVX2_LANE

void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0f;
        for (std::int64_t p = 0; p < k; ++p) {
            const __m256 va = _mm256_set1_ps(a[i * k + p]);
            const float aip = a[i * k + p];
            const float* brow = b + p * n;
            std::int64_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vc = _mm256_loadu_ps(crow + j);
                vc = _mm256_add_ps(vc, _mm256_mul_ps(va, _mm256_loadu_ps(brow + j)));
                _mm256_storeu_ps(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::int64_t p = 0; p < k; ++p) {
            const __m256d va = _mm256_set1_pd(a[i * k + p]);
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            std::int64_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_add_pd(vc, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j)));
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

namespace {

inline float hsum_lanes(__m256 v) {
    alignas(32) float lane[8];
    _mm256_store_ps(lane, v);
    float s = lane[0];
    for (int i = 1; i < 8; ++i) s += lane[i];
    return s;
}

inline double hsum_lanes(__m256d v) {
    alignas(32) double lane[4];
    _mm256_store_pd(lane, v);
    double s = lane[0];
    for (int i = 1; i < 4; ++i) s += lane[i];
    return s;
}

}  // namespace

void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * n;
        for (std::int64_t j = 0; j < k; ++j) {
            const float* brow = b + j * n;
            __m256 acc = _mm256_setzero_ps();
            std::int64_t p = 0;
            for (; p + 8 <= n; p += 8) {
                acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p)));
            }
            float s = hsum_lanes(acc);
            for (; p < n; ++p) s += arow[p] * brow[p];
            c[i * k + j] = s;
        }
    }
}

void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        for (std::int64_t j = 0; j < k; ++j) {
            const double* brow = b + j * n;
            __m256d acc = _mm256_setzero_pd();
            std::int64_t p = 0;
            for (; p + 4 <= n; p += 4) {
                acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p)));
            }
            double s = hsum_lanes(acc);
            for (; p < n; ++p) s += arow[p] * brow[p];
            c[i * k + j] = s;
        }
    }
}

void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < k; ++i) {
        float* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0f;
        for (std::int64_t p = 0; p < m; ++p) {
            const __m256 va = _mm256_set1_ps(a[p * k + i]);
            const float api = a[p * k + i];
            const float* brow = b + p * n;
            std::int64_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vc = _mm256_loadu_ps(crow + j);
                vc = _mm256_add_ps(vc, _mm256_mul_ps(va, _mm256_loadu_ps(brow + j)));
                _mm256_storeu_ps(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < k; ++i) {
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::int64_t p = 0; p < m; ++p) {
            const __m256d va = _mm256_set1_pd(a[p * k + i]);
            const double api = a[p * k + i];
            const double* brow = b + p * n;
            std::int64_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_add_pd(vc, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j)));
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

void vec_add(const float* x, const float* y, float* z, std::int64_t len) {
    std::int64_t i = 0;
    for (; i + 8 <= len; i += 8)
        _mm256_storeu_ps(z + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < len; ++i) z[i] = x[i] + y[i];
}
void vec_add(const double* x, const double* y, double* z, std::int64_t len) {
    std::int64_t i = 0;
    for (; i + 4 <= len; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < len; ++i) z[i] = x[i] + y[i];
}
void vec_sub(const float* x, const float* y, float* z, std::int64_t len) {
    std::int64_t i = 0;
    for (; i + 8 <= len; i += 8)
        _mm256_storeu_ps(z + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < len; ++i) z[i] = x[i] - y[i];
}
void vec_sub(const double* x, const double* y, double* z, std::int64_t len) {
    std::int64_t i = 0;
    for (; i + 4 <= len; i += 4)
        _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < len; ++i) z[i] = x[i] - y[i];
}
void vec_mul(const float* x, const float* y, float* z, std::int64_t len) {
    std::int64_t i = 0;
    for (; i + 8 <= len; i += 8)
        _mm256_storeu_ps(z + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < len; ++i) z[i] = x[i] * y[i];
}
void vec_mul(const double* x, const double* y, double* z, std::int64_t len) {
    std::int64_t i = 0;
    for (; i + 4 <= len; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < len; ++i) z[i] = x[i] * y[i];
}
void vec_scale(const float* x, float c, float* y, std::int64_t len) {
    const __m256 vc = _mm256_set1_ps(c);
    std::int64_t i = 0;
    for (; i + 8 <= len; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(vc, _mm256_loadu_ps(x + i)));
    for (; i < len; ++i) y[i] = c * x[i];
}
void vec_scale(const double* x, double c, double* y, std::int64_t len) {
    const __m256d vc = _mm256_set1_pd(c);
    std::int64_t i = 0;
    for (; i + 4 <= len; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
    for (; i < len; ++i) y[i] = c * x[i];
}
void vec_axpy(float c, const float* x, float* y, std::int64_t len) {
    const __m256 vc = _mm256_set1_ps(c);
    std::int64_t i = 0;
    for (; i + 8 <= len; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_add_ps(vy, _mm256_mul_ps(vc, _mm256_loadu_ps(x + i)));
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < len; ++i) y[i] += c * x[i];
}
void vec_axpy(double c, const double* x, double* y, std::int64_t len) {
    const __m256d vc = _mm256_set1_pd(c);
    std::int64_t i = 0;
    for (; i + 4 <= len; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < len; ++i) y[i] += c * x[i];
}

#else  // !LORALAB_HAVE_AVX2_LANE: keep the symbol set; forward to scalar.

void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    scalar::matmul_ab(a, b, c, m, k, n);
}
void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    scalar::matmul_ab(a, b, c, m, k, n);
}
void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    scalar::matmul_abt(a, b, c, m, n, k);
}
void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    scalar::matmul_abt(a, b, c, m, n, k);
}
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    scalar::matmul_atb(a, b, c, m, k, n);
}
void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    scalar::matmul_atb(a, b, c, m, k, n);
}
void vec_add(const float* x, const float* y, float* z, std::int64_t len) { scalar::vec_add(x, y, z, len); }
void vec_add(const double* x, const double* y, double* z, std::int64_t len) { scalar::vec_add(x, y, z, len); }
void vec_sub(const float* x, const float* y, float* z, std::int64_t len) { scalar::vec_sub(x, y, z, len); }
void vec_sub(const double* x, const double* y, double* z, std::int64_t len) { scalar::vec_sub(x, y, z, len); }
void vec_mul(const float* x, const float* y, float* z, std::int64_t len) { scalar::vec_mul(x, y, z, len); }
void vec_mul(const double* x, const double* y, double* z, std::int64_t len) { scalar::vec_mul(x, y, z, len); }
void vec_scale(const float* x, float c, float* y, std::int64_t len) { scalar::vec_scale(x, c, y, len); }
void vec_scale(const double* x, double c, double* y, std::int64_t len) { scalar::vec_scale(x, c, y, len); }
void vec_axpy(float c, const float* x, float* y, std::int64_t len) { scalar::vec_axpy(c, x, y, len); }
void vec_axpy(double c, const double* x, double* y, std::int64_t len) { scalar::vec_axpy(c, x, y, len); }

#endif

}  // namespace loralab::kern::avx2
