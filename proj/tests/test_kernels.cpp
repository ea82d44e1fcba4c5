#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "strkit/kernels.hpp"
#include "strkit/rng.hpp"

using namespace strkit;

namespace {

std::vector<float> random_vec(Rng& rng, size_t n, double scale = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.gaussian() * scale);
    return v;
}

bool close_rel(double a, double b, double tol) {
    const double diff = std::fabs(a - b);
    return diff <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Independent straight-line oracle in double precision.
double dot_oracle(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

} // namespace

TEST_CASE("scalar dot matches double oracle") {
    Rng rng(1);
    for (size_t n : {size_t(1), size_t(3), size_t(8), size_t(17), size_t(64), size_t(1000)}) {
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        const double got = kern::ref::dot(a.data(), b.data(), n);
        CHECK(close_rel(got, dot_oracle(a, b), 1e-4));
    }
}

TEST_CASE("simd variants match scalar reference") {
    for (auto backend : {kern::Backend::avx2, kern::Backend::neon}) {
        if (!kern::backend_available(backend)) continue;
        INFO("backend: ", kern::backend_name(backend));
        const auto& tbl = kern::table_for(backend);
        Rng rng(7);
        // Sizes chosen to exercise vector bodies and scalar tails.
        for (size_t n : {size_t(1), size_t(2), size_t(7), size_t(8), size_t(9), size_t(15),
                         size_t(16), size_t(31), size_t(200), size_t(513)}) {
            auto a = random_vec(rng, n);
            auto b = random_vec(rng, n);
            CHECK(close_rel(tbl.dot(a.data(), b.data(), n),
                            kern::ref::dot(a.data(), b.data(), n), 2e-5));
            CHECK(close_rel(tbl.reduce_sum(a.data(), n), kern::ref::reduce_sum(a.data(), n), 2e-5));
            CHECK(tbl.reduce_max(a.data(), n) == kern::ref::reduce_max(a.data(), n));

            auto y0 = random_vec(rng, n);
            auto y1 = y0;
            const float alpha = static_cast<float>(rng.gaussian());
            tbl.axpy(alpha, a.data(), y0.data(), n);
            kern::ref::axpy(alpha, a.data(), y1.data(), n);
            for (size_t i = 0; i < n; ++i) CHECK(close_rel(y0[i], y1[i], 2e-5));
        }
    }
}

TEST_CASE("simd matmuls match scalar reference") {
    for (auto backend : {kern::Backend::avx2, kern::Backend::neon}) {
        if (!kern::backend_available(backend)) continue;
        INFO("backend: ", kern::backend_name(backend));
        const auto& tbl = kern::table_for(backend);
        Rng rng(11);
        struct Dims { size_t m, k, n; };
        for (Dims d : {Dims{1, 1, 1}, Dims{3, 5, 2}, Dims{4, 16, 12}, Dims{7, 33, 9},
                       Dims{16, 64, 40}, Dims{5, 13, 31}}) {
            auto a = random_vec(rng, d.m * d.k);
            auto bt = random_vec(rng, d.n * d.k); // [n x k] for nt
            std::vector<float> c0(d.m * d.n), c1(d.m * d.n);
            tbl.matmul_nt(a.data(), bt.data(), c0.data(), d.m, d.k, d.n);
            kern::ref::matmul_nt(a.data(), bt.data(), c1.data(), d.m, d.k, d.n);
            for (size_t i = 0; i < c0.size(); ++i) CHECK(close_rel(c0[i], c1[i], 5e-5));

            auto b = random_vec(rng, d.k * d.n);
            std::vector<float> d0(d.m * d.n, 0.25f), d1(d.m * d.n, 0.25f);
            tbl.matmul_nn_acc(a.data(), b.data(), d0.data(), d.m, d.k, d.n);
            kern::ref::matmul_nn_acc(a.data(), b.data(), d1.data(), d.m, d.k, d.n);
            for (size_t i = 0; i < d0.size(); ++i) CHECK(close_rel(d0[i], d1[i], 5e-5));

            auto g = random_vec(rng, d.m * d.n);
            std::vector<float> e0(d.k * d.n, 0.0f), e1(d.k * d.n, 0.0f);
            tbl.matmul_tn_acc(a.data(), g.data(), e0.data(), d.m, d.k, d.n);
            kern::ref::matmul_tn_acc(a.data(), g.data(), e1.data(), d.m, d.k, d.n);
            for (size_t i = 0; i < e0.size(); ++i) CHECK(close_rel(e0[i], e1[i], 5e-5));
        }
    }
}

TEST_CASE("matmul_nt agrees with transposed nn composition") {
    Rng rng(13);
    const size_t m = 6, k = 24, n = 10;
    auto a = random_vec(rng, m * k);
    auto bt = random_vec(rng, n * k);
    // Build B [k x n] by transposing bt and push it through nn.
    std::vector<float> b(k * n);
    for (size_t j = 0; j < n; ++j)
        for (size_t p = 0; p < k; ++p) b[p * n + j] = bt[j * k + p];
    std::vector<float> c_nt(m * n), c_nn(m * n, 0.0f);
    kern::matmul_nt(a.data(), bt.data(), c_nt.data(), m, k, n);
    kern::matmul_nn_acc(a.data(), b.data(), c_nn.data(), m, k, n);
    for (size_t i = 0; i < c_nt.size(); ++i) CHECK(close_rel(c_nt[i], c_nn[i], 5e-5));
}

TEST_CASE("dispatch reports an available backend") {
    const auto b = kern::active_backend();
    CHECK(kern::backend_available(b));
    MESSAGE("active kernel backend: ", kern::backend_name(b));
}
