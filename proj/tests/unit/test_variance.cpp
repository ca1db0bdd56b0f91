#include <doctest.h>

#include <cmath>
#include <random>

#include "sdikit/random.hpp"
#include "sdikit/variance.hpp"

using namespace sdikit;

namespace {

Tensor gauss_matrix(uint32_t r, uint32_t c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    GaussianDraw g(rng);
    Tensor t = Tensor::matrix(r, c);
    for (auto& x : t.data) x = g();
    return t;
}

Tensor ones_matrix(uint32_t r, uint32_t c, double scale) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& x : t.data) x = scale;
    return t;
}

}  // namespace

TEST_CASE("cs variance closed form on sparse vectors") {
    const uint32_t m = 8;
    std::vector<double> e1(4, 0.0), e2(4, 0.0);
    e1[0] = 1.0;
    e2[1] = 1.0;
    CHECK(exact_cs_variance(e1, e2, m) == doctest::Approx(1.0 / m).epsilon(1e-12));
    CHECK(exact_cs_variance(e1, e1, m) == doctest::Approx(0.0));
    CHECK_THROWS_AS(exact_cs_variance(e1, std::vector<double>(3, 0.0), m), std::invalid_argument);
}

TEST_CASE("cs variance matches Monte-Carlo within 5 relative SEs") {
    std::mt19937_64 rng(41);
    GaussianDraw g(rng);
    std::vector<double> x(32), y(32);
    for (auto& v : x) v = g();
    for (auto& v : y) v = g();
    const uint32_t m = 16;
    const double exact = exact_cs_variance(x, y, m);
    const double bound = cs_variance_bound(x, y, m);
    CHECK(exact <= bound * (1.0 + 1e-12));

    const McStats mc = mc_cs_dot(x, y, m, 200000, 777);
    CHECK(std::abs(mc.variance - exact) <= 5.0 * mc.se_variance);
    CHECK(mc.variance <= bound * (1.0 + 5.0 * mc.se_variance / std::max(mc.variance, 1e-300)));
}

TEST_CASE("ts variance report on zero input") {
    const Tensor x = gauss_matrix(3, 4, 1);
    const Tensor y = Tensor::matrix(3, 4);
    const VarianceReport r = exact_ts_variance(x, y, 8);
    CHECK(r.exact_variance == doctest::Approx(0.0));
    CHECK(r.bound == doctest::Approx(0.0));
    CHECK(r.expected_dot == doctest::Approx(0.0));
}

TEST_CASE("ts variance rejects bad inputs") {
    const Tensor x = gauss_matrix(3, 4, 2);
    const Tensor y = gauss_matrix(4, 3, 3);
    CHECK_THROWS_AS(exact_ts_variance(x, y, 8), std::invalid_argument);
    const Tensor y2 = gauss_matrix(3, 4, 4);
    CHECK_THROWS_AS(exact_ts_variance(x, y2, 7), std::invalid_argument);  // odd m
}

TEST_CASE("ts variance matches Monte-Carlo within 5 relative SEs") {
    const Tensor x = gauss_matrix(3, 4, 5);
    const Tensor y = gauss_matrix(3, 4, 6);
    const uint32_t m = 8;
    VarianceReport r = exact_ts_variance(x, y, m);
    attach_ts_monte_carlo(r, x, y, m, 200000, 4242);
    CHECK(r.mc_trials == 200000);
    CHECK(std::abs(r.mc_mean - r.expected_dot) <= 5.0 * r.mc_se_mean);
    CHECK(std::abs(r.mc_variance - r.exact_variance) <= 5.0 * r.mc_se_variance);
}

TEST_CASE("exact variance stays within the bound across random shapes") {
    std::mt19937_64 rng(7);
    int checked = 0;
    for (uint32_t d = 2; d <= 8; ++d) {
        for (uint32_t dp = 2; dp <= 8; ++dp) {
            for (int rep = 0; rep < 3; ++rep) {
                const Tensor x = gauss_matrix(d, dp, rng());
                const Tensor y = gauss_matrix(d, dp, rng());
                const VarianceReport r = exact_ts_variance(x, y, 16);
                CHECK(r.exact_variance >= -1e-12 * r.bound);
                CHECK(r.exact_variance <= r.bound * (1.0 + 1e-12));
                ++checked;
            }
        }
    }
    CHECK(checked >= 100);
}

TEST_CASE("term identities hold at 1e-9 relative") {
    // independent reconstruction of P2/N2 from scratch terms
    const Tensor x = gauss_matrix(6, 5, 11);
    const Tensor y = gauss_matrix(6, 5, 12);
    const VarianceReport r = exact_ts_variance(x, y, 8);

    // recompute the pieces naively
    auto at = [](const Tensor& t, uint32_t i, uint32_t j) { return t(i, j); };
    const uint32_t d = x.rows(), dp = x.cols();
    double tr_xty_sq = 0.0, dot = 0.0, xf = 0.0, yf = 0.0, diag_xty = 0.0, diag_xyt = 0.0;
    std::vector<double> a(dp * dp, 0.0), b(d * d, 0.0);
    for (uint32_t j = 0; j < dp; ++j) {
        for (uint32_t l = 0; l < dp; ++l) {
            double acc = 0.0;
            for (uint32_t i = 0; i < d; ++i) acc += at(x, i, j) * at(y, i, l);
            a[j * dp + l] = acc;
        }
    }
    for (uint32_t i = 0; i < d; ++i) {
        for (uint32_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (uint32_t j = 0; j < dp; ++j) acc += at(x, i, j) * at(y, k, j);
            b[i * d + k] = acc;
        }
    }
    for (uint32_t j = 0; j < dp; ++j) {
        diag_xty += a[j * dp + j] * a[j * dp + j];
        for (uint32_t l = 0; l < dp; ++l) tr_xty_sq += a[j * dp + l] * a[l * dp + j];
    }
    for (uint32_t i = 0; i < d; ++i) diag_xyt += b[i * d + i] * b[i * d + i];
    for (size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        xf += x[i] * x[i];
        yf += y[i] * y[i];
    }

    const double p2_expected = r.p1 + 2.0 * tr_xty_sq + dot * dot + xf * yf;
    const double n2_expected = r.n1 + 2.0 * (diag_xty + diag_xyt);
    CHECK(r.p2 == doctest::Approx(p2_expected).epsilon(1e-9));
    CHECK(r.n2 == doctest::Approx(n2_expected).epsilon(1e-9));
}

TEST_CASE("all-ones witness formula matches the materialized oracle") {
    for (uint32_t d : {1u, 2u, 4u, 8u}) {
        for (uint32_t dp : {1u, 3u, 8u}) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(d) * dp);
            const Tensor x = ones_matrix(d, dp, scale);
            const VarianceReport r = exact_ts_variance(x, x, 16);
            CHECK(r.exact_variance ==
                  doctest::Approx(witness_exact_variance(d, dp, 16)).epsilon(1e-12));
            CHECK(r.bound == doctest::Approx(ts_bound_factor(16)).epsilon(1e-12));
        }
    }
}

TEST_CASE("tightness gap behavior") {
    const uint32_t m = 16;
    // 1x1 matrices: no off-diagonal collisions, variance is exactly zero
    CHECK(witness_exact_variance(1, 1, m) == doctest::Approx(0.0));
    CHECK(tightness_gap(1, 1, m) == doctest::Approx(ts_bound_factor(m)).epsilon(1e-12));

    // witness approaches the bound
    CHECK(tightness_gap(1024, 1024, 2048) <= 0.01 * ts_bound_factor(2048));

    // monotone shrink when doubling dims
    for (uint32_t d : {2u, 4u, 8u}) {
        for (uint32_t dp : {2u, 4u, 8u}) {
            CHECK(tightness_gap(d, dp, m) > tightness_gap(2 * d, 2 * dp, m));
        }
    }
}

TEST_CASE("the 4/m^2 + 6/m factor never exceeds 8/m, strictly below for m >= 3") {
    // 4/m^2 + 6/m == 8/m exactly at m = 2; strict inequality starts at m = 3
    CHECK(ts_bound_factor(2) == doctest::Approx(8.0 / 2.0));
    for (uint32_t m = 3; m <= (1u << 20); ++m) {
        if (ts_bound_factor(m) >= 8.0 / m) {
            FAIL("factor not strictly tighter at m = " << m);
        }
    }
}

TEST_CASE("variance report serializes") {
    VarianceReport r = exact_ts_variance(gauss_matrix(2, 2, 1), gauss_matrix(2, 2, 2), 4);
    const std::string js = r.to_json();
    CHECK(js.find("exact_variance") != std::string::npos);
    CHECK(js.find("P1") != std::string::npos);
}
