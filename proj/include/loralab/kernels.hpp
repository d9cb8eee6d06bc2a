// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major arithmetic kernels. Every kernel exists as a scalar
// reference implementation and, on x86-64, as an AVX2 variant. The public
// entry points dispatch to one implementation selected once per process:
// AVX2 when the CPU supports it, scalar otherwise. Set LORALAB_KERNELS to
// "scalar" or "avx2" to force a lane.
//
// The AVX2 matmul_ab / matmul_atb / elementwise kernels preserve the scalar
// per-element operation order (mul then add, no FMA contraction), so the two
// lanes produce bit-identical results. matmul_abt reduces dot products
// through vector lanes and therefore matches the scalar lane only up to
// rounding; the equivalence tests pin the tolerance.

#pragma once

#include <cstdint>

namespace loralab::kern {

enum class Isa { Scalar, Avx2 };

/// Lane used by the dispatching entry points, resolved once per process.
Isa active_isa();
const char* isa_name(Isa isa);

/// True when the running CPU can execute the AVX2 lane.
bool avx2_supported();

// C[m x n] = A[m x k] * B[k x n]
void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n);

// C[m x k] = A[m x n] * B[k x n]^T
void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k);
void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k);

// C[k x n] = A[m x k]^T * B[m x n]
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n);

// z[i] = x[i] op y[i]
void vec_add(const float* x, const float* y, float* z, std::int64_t len);
void vec_add(const double* x, const double* y, double* z, std::int64_t len);
void vec_sub(const float* x, const float* y, float* z, std::int64_t len);
void vec_sub(const double* x, const double* y, double* z, std::int64_t len);
void vec_mul(const float* x, const float* y, float* z, std::int64_t len);
void vec_mul(const double* x, const double* y, double* z, std::int64_t len);

// y[i] = c * x[i]
void vec_scale(const float* x, float c, float* y, std::int64_t len);
void vec_scale(const double* x, double c, double* y, std::int64_t len);

// y[i] += c * x[i]
void vec_axpy(float c, const float* x, float* y, std::int64_t len);
void vec_axpy(double c, const double* x, double* y, std::int64_t len);

// Reference lane, always available. Used directly by the equivalence tests.
namespace scalar {
void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k);
void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k);
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n);
void vec_add(const float* x, const float* y, float* z, std::int64_t len);
void vec_add(const double* x, const double* y, double* z, std::int64_t len);
void vec_sub(const float* x, const float* y, float* z, std::int64_t len);
void vec_sub(const double* x, const double* y, double* z, std::int64_t len);
void vec_mul(const float* x, const float* y, float* z, std::int64_t len);
void vec_mul(const double* x, const double* y, double* z, std::int64_t len);
void vec_scale(const float* x, float c, float* y, std::int64_t len);
void vec_scale(const double* x, double c, double* y, std::int64_t len);
void vec_axpy(float c, const float* x, float* y, std::int64_t len);
void vec_axpy(double c, const double* x, double* y, std::int64_t len);
}  // namespace scalar

// AVX2 lane. Only call when avx2_supported() is true; on non-x86 builds
// these fall back to the scalar lane.
namespace avx2 {
void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k);
void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k);
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n);
void vec_add(const float* x, const float* y, float* z, std::int64_t len);
void vec_add(const double* x, const double* y, double* z, std::int64_t len);
void vec_sub(const float* x, const float* y, float* z, std::int64_t len);
void vec_sub(const double* x, const double* y, double* z, std::int64_t len);
void vec_mul(const float* x, const float* y, float* z, std::int64_t len);
void vec_mul(const double* x, const double* y, double* z, std::int64_t len);
void vec_scale(const float* x, float c, float* y, std::int64_t len);
void vec_scale(const double* x, double c, double* y, std::int64_t len);
void vec_axpy(float c, const float* x, float* y, std::int64_t len);
void vec_axpy(double c, const double* x, double* y, std::int64_t len);
}  // namespace avx2

}  // namespace loralab::kern
