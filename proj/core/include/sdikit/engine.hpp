#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdikit/model.hpp"
#include "sdikit/sketch.hpp"

namespace sdikit {

/// Per-example, per-step feature rows for one checkpoint. In sketched mode
/// a row is the concatenated per-tensor sketch (dim = n_tensors * m); in
/// exact mode it is the flattened per-step body gradient (dim = |w_body|).
/// The per-example total gradient feature is the sum of its step rows in
/// ascending step order.
struct StepFeatureMatrix {
    enum class Mode : uint8_t { exact, sketched };

    Mode mode = Mode::sketched;
    uint64_t plan_id = 0;
    uint32_t m = 0;
    uint32_t n_tensors = 0;
    uint32_t tau = 0;
    uint32_t n_examples = 0;
    size_t dim = 0;
    std::vector<double> data;  // [example][step][dim]
    std::vector<std::string> ids;

    std::span<const double> step_row(uint32_t example, uint32_t t) const {
        return {data.data() + (static_cast<size_t>(example) * tau + t) * dim, dim};
    }
    std::span<double> step_row_mut(uint32_t example, uint32_t t) {
        return {data.data() + (static_cast<size_t>(example) * tau + t) * dim, dim};
    }
    std::vector<double> total_row(uint32_t example) const;
};

/// Instrumented allocation counters for the streaming featurizer.
struct FeaturizeStats {
    size_t peak_live_bytes_per_example = 0;  // sketch buffers + FFT workspace
    size_t feature_bytes_per_example = 0;    // the tau * n_tensors * m block
};

/// Streams sketches during the backward pass of every example: per step,
/// per matrix tensor sum_j TS(delta, a); per vector tensor sum_j CS(delta).
/// Per-example gradients are never materialized; per-example live state is
/// Theta(tau * n_tensors * m), independent of |w_body|.
StepFeatureMatrix featurize_batch(const Parameters& params, const ModelConfig& cfg,
                                  std::span<const Example> examples, const SketchPlan& plan,
                                  FeaturizeStats* stats = nullptr);

/// Oracle/baseline path with materialized per-step gradients. Refuses
/// models whose body exceeds `param_budget` flattened entries.
StepFeatureMatrix exact_featurize(const Parameters& params, const ModelConfig& cfg,
                                  std::span<const Example> examples,
                                  size_t param_budget = 1000000);

/// Featurizes a mixed-length example set at a common analysis horizon:
/// examples are grouped by sequence length, each group runs with seq_len
/// bound to its length and loop_horizon = analysis_tau, and rows are
/// reassembled in input order (feature dim is length-independent).
StepFeatureMatrix featurize_examples(const Parameters& params, const ModelConfig& base_cfg,
                                     std::span<const Example> examples, const SketchPlan& plan,
                                     uint32_t analysis_tau);

/// One StepFeatureMatrix per checkpoint, in training order.
using CheckpointFeatures = std::vector<StepFeatureMatrix>;

struct InfluenceTrajectory {
    std::vector<double> steps;
    double tracin = 0.0;
    std::string train_id;
    std::string test_id;
    StepFeatureMatrix::Mode mode = StepFeatureMatrix::Mode::sketched;
};

/// tau x tau stepwise influence matrix; row sums give the train-side
/// decomposition, column sums the test-side one, the grand sum TracIn.
struct StepMatrix {
    uint32_t tau = 0;
    std::vector<double> values;  // [train_step][test_step]

    double at(uint32_t s, uint32_t t) const { return values[static_cast<size_t>(s) * tau + t]; }
    std::vector<double> row_sums() const;
    std::vector<double> col_sums() const;
    double total() const;
};

/// sum_k eta_k <g_k(z_i), g_k(z'_j)> for all pairs; [n_train][n_test]
/// row-major.
std::vector<double> tracin_matrix(const CheckpointFeatures& train, const CheckpointFeatures& test,
                                  std::span<const double> etas);

/// Test-side SDI: steps[t] = sum_k eta_k <g_k(z), phi_{k,t}(z')>. The
/// conservation identity sum_t steps[t] == tracin is checked and enforced.
InfluenceTrajectory sdi_test_side(const CheckpointFeatures& train, const CheckpointFeatures& test,
                                  std::span<const double> etas, uint32_t train_idx,
                                  uint32_t test_idx);

/// Train-side decomposition: steps[t] = sum_k eta_k <phi_{k,t}(z), g_k(z')>.
InfluenceTrajectory sdi_train_side(const CheckpointFeatures& train, const CheckpointFeatures& test,
                                   std::span<const double> etas, uint32_t train_idx,
                                   uint32_t test_idx);

StepMatrix sdi_matrix(const CheckpointFeatures& train, const CheckpointFeatures& test,
                      std::span<const double> etas, uint32_t train_idx, uint32_t test_idx);

/// Full [n_train][n_test][tau] SDI tensor (test-side decomposition).
std::vector<double> sdi_tensor(const CheckpointFeatures& train, const CheckpointFeatures& test,
                               std::span<const double> etas);

struct FidelityReport {
    double rel_frobenius_sdi = 0.0;
    double rel_frobenius_tracin = 0.0;
};

/// Relative Frobenius error of a sketched SDI tensor against the exact one
/// (same pair grid, same tau); TracIn compares the step-summed matrices.
FidelityReport fidelity_report(std::span<const double> exact_sdi,
                               std::span<const double> sketched_sdi, uint32_t n_train,
                               uint32_t n_test, uint32_t tau);

/// Binary feature cache, one file per (checkpoint, split):
/// "SDIF" magic, u32 m / tau / n_tensors / n_examples, then row-major f64
/// [example][step][feature]. Little-endian.
void write_feature_cache(const std::string& path, const StepFeatureMatrix& features);
StepFeatureMatrix read_feature_cache(const std::string& path, uint64_t expected_plan_id = 0);

/// {schema_version, pairs: [{train_id, test_id, tracin, steps: [...]}]}
void write_influence_json(const std::string& path,
                          std::span<const InfluenceTrajectory> trajectories);
/// CSV mirror: train_id,test_id,tracin,step_1..step_tau.
void write_influence_csv(const std::string& path,
                         std::span<const InfluenceTrajectory> trajectories);

}  // namespace sdikit
