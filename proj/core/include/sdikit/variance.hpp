#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "sdikit/tensor.hpp"

namespace sdikit {

/// Exact second-moment analysis of TensorSketch dot products beside their
/// Monte-Carlo estimates. P1/N1 carry the 2/m^2 weight, P2/N2 the 1/m
/// weight:
///   exact_variance = (2/m^2)(P1 - N1) + (1/m)(P2 - N2)
///   bound          = (4/m^2 + 6/m) * |X|_F^2 * |Y|_F^2
struct VarianceReport {
    double expected_dot = 0.0;
    double p1 = 0.0;
    double n1 = 0.0;
    double p2 = 0.0;
    double n2 = 0.0;
    double exact_variance = 0.0;
    double bound = 0.0;

    double mc_mean = 0.0;
    double mc_variance = 0.0;
    double mc_se_mean = 0.0;
    double mc_se_variance = 0.0;
    uint64_t mc_trials = 0;

    std::string to_json() const;
};

/// Sample statistics of a Monte-Carlo scalar stream. se_variance is the
/// standard error of the sample variance (fourth-moment based).
struct McStats {
    double mean = 0.0;
    double variance = 0.0;
    double se_mean = 0.0;
    double se_variance = 0.0;
    uint64_t trials = 0;
};

McStats summarize_trials(std::span<const double> values);

/// Closed-form expectation/variance of <TS(X), TS(Y)> for same-shape
/// matrices under fresh 2-wise bucket / 4-wise sign hashes; m must be even.
VarianceReport exact_ts_variance(const Tensor& x, const Tensor& y, uint32_t m);

/// Runs `trials` independent hash draws of <TS(X), TS(Y)> and fills the
/// mc_* fields of the report. Deterministic in (seed, trials).
void attach_ts_monte_carlo(VarianceReport& report, const Tensor& x, const Tensor& y, uint32_t m,
                           uint64_t trials, uint64_t seed);

/// Exact CountSketch dot-product variance:
/// (1/m) (sum_{i != j} x_i^2 y_j^2 + sum_{i != j} x_i y_i x_j y_j).
double exact_cs_variance(std::span<const double> x, std::span<const double> y, uint32_t m);

/// (2/m) |x|^2 |y|^2.
double cs_variance_bound(std::span<const double> x, std::span<const double> y, uint32_t m);

/// Monte-Carlo dot products <CS(x), CS(y)> over fresh hash pairs.
McStats mc_cs_dot(std::span<const double> x, std::span<const double> y, uint32_t m,
                  uint64_t trials, uint64_t seed);

/// 4/m^2 + 6/m.
double ts_bound_factor(uint32_t m);

/// Exact variance attained by the normalized all-ones witness
/// X = Y = (1/sqrt(d d')) 1_{d x d'}; approaches the bound as d, d' grow.
double witness_exact_variance(uint32_t d, uint32_t d_prime, uint32_t m);

/// bound - exact_variance for the all-ones witness; positive, and shrinks
/// monotonically as the dimensions grow.
double tightness_gap(uint32_t d, uint32_t d_prime, uint32_t m);

}  // namespace sdikit
