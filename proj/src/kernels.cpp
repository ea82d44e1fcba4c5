#include "strkit/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace strkit::kern {

namespace {

float dot_scalar(const float* a, const float* b, size_t n) { return ref::dot(a, b, n); }
void axpy_scalar(float alpha, const float* x, float* y, size_t n) { ref::axpy(alpha, x, y, n); }
float reduce_max_scalar(const float* x, size_t n) { return ref::reduce_max(x, n); }
float reduce_sum_scalar(const float* x, size_t n) { return ref::reduce_sum(x, n); }
void matmul_nt_scalar(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    ref::matmul_nt(a, b, c, m, k, n);
}
void matmul_nn_acc_scalar(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    ref::matmul_nn_acc(a, b, c, m, k, n);
}
void matmul_tn_acc_scalar(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    ref::matmul_tn_acc(a, b, c, m, k, n);
}

constexpr KernelTable kScalarTable = {
    dot_scalar,        axpy_scalar,          reduce_max_scalar, reduce_sum_scalar,
    matmul_nt_scalar,  matmul_nn_acc_scalar, matmul_tn_acc_scalar,
};

} // namespace

#if defined(STRKIT_HAVE_AVX2_TU)
namespace avx2 {
extern const KernelTable kTable;
bool cpu_supported();
} // namespace avx2
#endif

#if defined(STRKIT_HAVE_NEON_TU)
namespace neon {
extern const KernelTable kTable;
}
#endif

bool backend_available(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(STRKIT_HAVE_AVX2_TU)
            return avx2::cpu_supported();
#else
            return false;
#endif
        case Backend::neon:
#if defined(STRKIT_HAVE_NEON_TU)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& table_for(Backend b) {
    switch (b) {
        case Backend::scalar:
            return kScalarTable;
        case Backend::avx2:
#if defined(STRKIT_HAVE_AVX2_TU)
            if (avx2::cpu_supported()) return avx2::kTable;
#endif
            throw std::runtime_error("avx2 kernels unavailable on this machine");
        case Backend::neon:
#if defined(STRKIT_HAVE_NEON_TU)
            return neon::kTable;
#else
            throw std::runtime_error("neon kernels unavailable on this machine");
#endif
    }
    throw std::runtime_error("unknown kernel backend");
}

namespace {

Backend pick_backend() {
    if (const char* env = std::getenv("STRKIT_KERNELS")) {
        const std::string want(env);
        if (want == "scalar") return Backend::scalar;
        if (want == "avx2" && backend_available(Backend::avx2)) return Backend::avx2;
        if (want == "neon" && backend_available(Backend::neon)) return Backend::neon;
        // Unknown or unavailable request falls through to auto-detection.
    }
    if (backend_available(Backend::avx2)) return Backend::avx2;
    if (backend_available(Backend::neon)) return Backend::neon;
    return Backend::scalar;
}

struct Dispatch {
    Backend backend;
    const KernelTable* table;
    Dispatch() : backend(pick_backend()), table(&table_for(backend)) {}
};

const Dispatch& dispatch() {
    static const Dispatch d;
    return d;
}

} // namespace

Backend active_backend() { return dispatch().backend; }

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::neon: return "neon";
    }
    return "?";
}

float dot(const float* a, const float* b, size_t n) { return dispatch().table->dot(a, b, n); }
void axpy(float alpha, const float* x, float* y, size_t n) { dispatch().table->axpy(alpha, x, y, n); }
float reduce_max(const float* x, size_t n) { return dispatch().table->reduce_max(x, n); }
float reduce_sum(const float* x, size_t n) { return dispatch().table->reduce_sum(x, n); }
void matmul_nt(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    dispatch().table->matmul_nt(a, b, c, m, k, n);
}
void matmul_nn_acc(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    dispatch().table->matmul_nn_acc(a, b, c, m, k, n);
}
void matmul_tn_acc(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
    dispatch().table->matmul_tn_acc(a, b, c, m, k, n);
}

} // namespace strkit::kern
