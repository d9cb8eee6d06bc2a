// SPDX-License-Identifier: Apache-2.0

#include "loralab/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace loralab::kern {

bool avx2_supported() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

const char* isa_name(Isa isa) {
    return isa == Isa::Avx2 ? "avx2" : "scalar";
}

namespace {

Isa resolve_isa() {
    if (const char* env = std::getenv("LORALAB_KERNELS")) {
        const std::string want(env);
        if (want == "scalar") return Isa::Scalar;
        if (want == "avx2") {
            if (!avx2_supported())
                throw std::runtime_error("LORALAB_KERNELS=avx2 but the CPU does not support AVX2");
            return Isa::Avx2;
        }
        throw std::runtime_error("LORALAB_KERNELS must be 'scalar' or 'avx2', got '" + want + "'");
    }
    return avx2_supported() ? Isa::Avx2 : Isa::Scalar;
}

}  // namespace

Isa active_isa() {
    static const Isa isa = resolve_isa();
    return isa;
}

#define LORALAB_DISPATCH(fn, ...)                                  \
    do {                                                           \
        if (active_isa() == Isa::Avx2) return avx2::fn(__VA_ARGS__); \
        return scalar::fn(__VA_ARGS__);                            \
    } while (0)

void matmul_ab(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    LORALAB_DISPATCH(matmul_ab, a, b, c, m, k, n);
}
void matmul_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    LORALAB_DISPATCH(matmul_ab, a, b, c, m, k, n);
}
void matmul_abt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    LORALAB_DISPATCH(matmul_abt, a, b, c, m, n, k);
}
void matmul_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    LORALAB_DISPATCH(matmul_abt, a, b, c, m, n, k);
}
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    LORALAB_DISPATCH(matmul_atb, a, b, c, m, k, n);
}
void matmul_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    LORALAB_DISPATCH(matmul_atb, a, b, c, m, k, n);
}
void vec_add(const float* x, const float* y, float* z, std::int64_t len) { LORALAB_DISPATCH(vec_add, x, y, z, len); }
void vec_add(const double* x, const double* y, double* z, std::int64_t len) { LORALAB_DISPATCH(vec_add, x, y, z, len); }
void vec_sub(const float* x, const float* y, float* z, std::int64_t len) { LORALAB_DISPATCH(vec_sub, x, y, z, len); }
void vec_sub(const double* x, const double* y, double* z, std::int64_t len) { LORALAB_DISPATCH(vec_sub, x, y, z, len); }
void vec_mul(const float* x, const float* y, float* z, std::int64_t len) { LORALAB_DISPATCH(vec_mul, x, y, z, len); }
void vec_mul(const double* x, const double* y, double* z, std::int64_t len) { LORALAB_DISPATCH(vec_mul, x, y, z, len); }
void vec_scale(const float* x, float c, float* y, std::int64_t len) { LORALAB_DISPATCH(vec_scale, x, c, y, len); }
void vec_scale(const double* x, double c, double* y, std::int64_t len) { LORALAB_DISPATCH(vec_scale, x, c, y, len); }
void vec_axpy(float c, const float* x, float* y, std::int64_t len) { LORALAB_DISPATCH(vec_axpy, c, x, y, len); }
void vec_axpy(double c, const double* x, double* y, std::int64_t len) { LORALAB_DISPATCH(vec_axpy, c, x, y, len); }

#undef LORALAB_DISPATCH

}  // namespace loralab::kern
