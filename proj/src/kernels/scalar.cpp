// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference kernels. Compiled with -ffp-contract=off so the compiler
// cannot fuse the mul/add pairs into FMA; the AVX2 lane mirrors the exact
// operation order and rounding of these loops.

#include "loralab/kernels.hpp"

namespace loralab::kern::scalar {

namespace {

// C[i,j] = sum_p A[i,p] * B[p,j], accumulated in ascending p.
template <typename T>
void matmul_ab_impl(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
        for (std::int64_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            const T* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C[i,j] = dot(A row i, B row j); A is m x n, B is k x n.
template <typename T>
void matmul_abt_impl(const T* a, const T* b_, T* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        for (std::int64_t j = 0; j < k; ++j) {
            const T* brow = b_ + j * n;
            T s = T(0);
            for (std::int64_t p = 0; p < n; ++p) s += arow[p] * brow[p];
            c[i * k + j] = s;
        }
    }
}

// C[i,j] = sum_p A[p,i] * B[p,j]; A is m x k, B is m x n.
template <typename T>
void matmul_atb_impl(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < k; ++i) {
        T* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
        for (std::int64_t p = 0; p < m; ++p) {
            const T api = a[p * k + i];
            const T* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

}  // namespace

void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    matmul_ab_impl(a, b, c, m, k, n);
}
void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    matmul_ab_impl(a, b, c, m, k, n);
}
void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    matmul_abt_impl(a, b, c, m, n, k);
}
void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    matmul_abt_impl(a, b, c, m, n, k);
}
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    matmul_atb_impl(a, b, c, m, k, n);
}
void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    matmul_atb_impl(a, b, c, m, k, n);
}

void vec_add(const float* x, const float* y, float* z, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] + y[i];
}
void vec_add(const double* x, const double* y, double* z, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] + y[i];
}
void vec_sub(const float* x, const float* y, float* z, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] - y[i];
}
void vec_sub(const double* x, const double* y, double* z, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] - y[i];
}
void vec_mul(const float* x, const float* y, float* z, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] * y[i];
}
void vec_mul(const double* x, const double* y, double* z, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] * y[i];
}
void vec_scale(const float* x, float c, float* y, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) y[i] = c * x[i];
}
void vec_scale(const double* x, double c, double* y, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) y[i] = c * x[i];
}
void vec_axpy(float c, const float* x, float* y, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) y[i] += c * x[i];
}
void vec_axpy(double c, const double* x, double* y, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) y[i] += c * x[i];
}

}  // namespace loralab::kern::scalar
