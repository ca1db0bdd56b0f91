#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdikit/engine.hpp"
#include "sdikit/model.hpp"
#include "sdikit/parity.hpp"

namespace sdikit {

/// Top principal components of row vectors via power iteration with
/// deflation on the covariance; tolerance 1e-10, at most 1e4 iterations
/// per component.
struct PcaResult {
    std::vector<double> mean;        // d
    std::vector<double> components;  // [n_components][d]
    std::vector<double> eigenvalues;
    std::vector<double> coords;  // [n][n_components]
};

PcaResult power_iteration_pca(const std::vector<double>& rows, size_t n, size_t d,
                              uint32_t n_components);

struct KMeansResult {
    std::vector<double> centroids;  // [k][d]
    std::vector<uint32_t> labels;   // [n]
    double inertia = 0.0;
    uint32_t k = 0;
};

/// k-means++ seeding, Lloyd iterations, `restarts` independent starts with
/// the best inertia kept. Deterministic under seed.
KMeansResult kmeans(const std::vector<double>& points, size_t n, size_t d, uint32_t k,
                    uint32_t restarts, uint64_t seed);

/// Mechanistic summary of the answer-token hidden-state trajectory across
/// loop steps: lag cosines, a 2-D PCA phase portrait, a k-means state
/// sequence with its empirical transition matrix, and a state->parity
/// lookup proxy fitted on alternating inputs.
struct CycleReport {
    uint32_t tau = 0;
    uint32_t k = 0;
    std::vector<double> cosine_lag_table;      // lag p = 1..8
    std::vector<double> pca_coords;            // [tau][2]
    std::vector<uint32_t> state_sequence;      // [tau]
    std::vector<double> transition_matrix;     // [k][k], rows sum to 1
    double proxy_accuracy = 0.0;
    double selective_proxy_accuracy = 0.0;
    double selective_coverage = 0.0;
    bool degenerate = false;
    std::string warning;

    std::string to_json() const;
};

struct CycleOptions {
    uint32_t k = 4;
    uint32_t restarts = 20;
    uint64_t seed = 0;
    uint32_t calibration_count = 256;
    uint32_t eval_count = 1024;
    uint32_t max_probe_length = 40;
    double selective_percentile = 95.0;
};

/// Unrolls the model on `probe`, records the answer-token hidden state per
/// loop step, and builds the CycleReport. If fewer distinct states than k
/// are observed the report is marked degenerate (with a warning) and k is
/// reduced to what the data supports.
CycleReport analyze_cycle(const Parameters& params, const ModelConfig& base,
                          const ParityExample& probe, const CycleOptions& opts);

/// Per-query SDI energy curve e(t) = sum_train |steps[t]| plus its
/// normalized late mass (steps t >= ceil(tau/2)+1).
struct EnergyRow {
    std::string test_id;
    std::vector<double> energy;
    double late_mass = 0.0;
    std::optional<double> difficulty;
};

std::vector<EnergyRow> sdi_energy(std::span<const InfluenceTrajectory> trajectories,
                                  const std::map<std::string, double>* difficulty = nullptr);

/// Median/IQR of the energy curves per difficulty bin (generic histogram
/// over the difficulty column; rows without difficulty go to bin 0).
struct EnergyBinSummary {
    uint32_t bin = 0;
    double lo = 0.0, hi = 0.0;
    size_t count = 0;
    std::vector<double> median;  // per step
    std::vector<double> q25;
    std::vector<double> q75;
};

std::vector<EnergyBinSummary> aggregate_energy(const std::vector<EnergyRow>& rows, uint32_t bins);

}  // namespace sdikit
