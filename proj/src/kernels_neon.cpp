// NEON kernel variants for aarch64 builds. Mirrors kernels_avx2.cpp; the
// equivalence tests cover whichever variant the build carries.

#include <arm_neon.h>

#include <cstddef>

#include "strkit/kernels.hpp"

namespace strkit::kern::neon {

namespace {

float dot_neon(const float* a, const float* b, size_t n) {
    float32x4_t acc0 = vdupq_n_f32(0.0f);
    float32x4_t acc1 = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
        acc1 = vfmaq_f32(acc1, vld1q_f32(a + i + 4), vld1q_f32(b + i + 4));
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
    }
    float acc = vaddvq_f32(vaddq_f32(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_neon(float alpha, const float* x, float* y, size_t n) {
    const float32x4_t va = vdupq_n_f32(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

float reduce_max_neon(const float* x, size_t n) {
    if (n < 4) return ref::reduce_max(x, n);
    float32x4_t vm = vld1q_f32(x);
    size_t i = 4;
    for (; i + 4 <= n; i += 4) vm = vmaxq_f32(vm, vld1q_f32(x + i));
    float m = vmaxvq_f32(vm);
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

float reduce_sum_neon(const float* x, size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
    float s = vaddvq_f32(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void matmul_nt_neon(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) crow[j] = dot_neon(arow, b + j * k, k);
    }
}

void matmul_nn_acc_neon(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) axpy_neon(arow[p], b + p * n, crow, n);
    }
}

void matmul_tn_acc_neon(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        const float* brow = b + i * n;
        for (size_t p = 0; p < k; ++p) axpy_neon(arow[p], brow, c + p * n, n);
    }
}

} // namespace

extern const KernelTable kTable;
const KernelTable kTable = {
    dot_neon,        axpy_neon,          reduce_max_neon, reduce_sum_neon,
    matmul_nt_neon,  matmul_nn_acc_neon, matmul_tn_acc_neon,
};

} // namespace strkit::kern::neon
