#pragma once

#include <cstddef>

namespace strkit::kern {

// The hot inner loops of the toolkit. Scalar reference kernels define the
// semantics; AVX2/NEON variants are selected once at startup and must match
// the reference within floating-point reassociation tolerance (see
// tests/test_kernels.cpp). Matrices are row-major.

enum class Backend { scalar, avx2, neon };

// Active backend for the float entry points. Chosen at first use from CPU
// capabilities; overridable with STRKIT_KERNELS=scalar|avx2|neon.
Backend active_backend();
const char* backend_name(Backend b);

namespace ref {

template <class T>
T dot(const T* a, const T* b, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// y += alpha * x
template <class T>
void axpy(T alpha, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T reduce_max(const T* x, size_t n) {
    T m = x[0];
    for (size_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

template <class T>
T reduce_sum(const T* x, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

// C[M x N] = A[M x K] * B^T where B is [N x K]; both operand rows contiguous.
template <class T>
void matmul_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) crow[j] = dot(arow, b + j * k, k);
    }
}

// C[M x N] += A[M x K] * B[K x N]
template <class T>
void matmul_nn_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) axpy(arow[p], b + p * n, crow, n);
    }
}

// C[K x N] += A^T * B where A is [M x K], B is [M x N]
template <class T>
void matmul_tn_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (size_t p = 0; p < k; ++p) axpy(arow[p], brow, c + p * n, n);
    }
}

} // namespace ref

// Dispatched float entry points (used by the float training path).
float dot(const float* a, const float* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
float reduce_max(const float* x, size_t n);
float reduce_sum(const float* x, size_t n);
void matmul_nt(const float* a, const float* b, float* c, size_t m, size_t k, size_t n);
void matmul_nn_acc(const float* a, const float* b, float* c, size_t m, size_t k, size_t n);
void matmul_tn_acc(const float* a, const float* b, float* c, size_t m, size_t k, size_t n);

// Double overloads route to the scalar reference; the double instantiation
// of the model exists for verification, not speed.
inline double dot(const double* a, const double* b, size_t n) { return ref::dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, size_t n) { ref::axpy(alpha, x, y, n); }
inline double reduce_max(const double* x, size_t n) { return ref::reduce_max(x, n); }
inline double reduce_sum(const double* x, size_t n) { return ref::reduce_sum(x, n); }
inline void matmul_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    ref::matmul_nt(a, b, c, m, k, n);
}
inline void matmul_nn_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    ref::matmul_nn_acc(a, b, c, m, k, n);
}
inline void matmul_tn_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    ref::matmul_tn_acc(a, b, c, m, k, n);
}

// Variant tables, exposed so the equivalence tests can run a specific
// backend regardless of what dispatch picked.
struct KernelTable {
    float (*dot)(const float*, const float*, size_t);
    void (*axpy)(float, const float*, float*, size_t);
    float (*reduce_max)(const float*, size_t);
    float (*reduce_sum)(const float*, size_t);
    void (*matmul_nt)(const float*, const float*, float*, size_t, size_t, size_t);
    void (*matmul_nn_acc)(const float*, const float*, float*, size_t, size_t, size_t);
    void (*matmul_tn_acc)(const float*, const float*, float*, size_t, size_t, size_t);
};

const KernelTable& table_for(Backend b); // throws if the backend is unavailable
bool backend_available(Backend b);

} // namespace strkit::kern
