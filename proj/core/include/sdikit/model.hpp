#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sdikit/sketch.hpp"
#include "sdikit/tensor.hpp"

namespace sdikit {

enum class Injection : uint8_t { additive, none };
enum class Nonlinearity : uint8_t { relu, gelu };

/// Weight-tied looped transformer: a single pre-norm decoder block applied
/// loop_horizon times to its own hidden state, with optional additive
/// re-injection of the read-in embedding at every step.
struct ModelConfig {
    uint32_t vocab_size = 6;
    uint32_t d_model = 32;
    uint32_t n_heads = 4;
    uint32_t seq_len = 16;
    uint32_t loop_horizon = 8;
    Injection injection = Injection::additive;
    Nonlinearity nonlinearity = Nonlinearity::relu;
    uint32_t truncation_k = 0;  // 0 = full BPTT; k keeps only the last k steps
    bool causal = true;
    // fixed sinusoidal position signal added by the read-in; without it the
    // attention over interchangeable bit tokens collapses to counting
    bool sinusoidal_pos = true;
    uint64_t seed = 0;

    uint32_t d_ff() const { return 4 * d_model; }
    uint32_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

/// All learnable tensors. Matrix parameters are [d_out, d_in] and enter the
/// block only through tokenwise affine maps c = W a + b, which is what lets
/// the backward pass expose per-token (delta, activation) factor pairs.
struct Parameters {
    Tensor w_in;  // [vocab, d] embedding table
    Tensor ln1_g, ln1_b;
    Tensor attn_wq, attn_wk, attn_wv, attn_wo;
    Tensor ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1;  // [d_ff, d], [d_ff]
    Tensor mlp_w2, mlp_b2;  // [d, d_ff], [d]
    Tensor w_out, b_out;    // [vocab, d], [vocab]

    static Parameters zeros_like(const ModelConfig& cfg);
    static Parameters init(const ModelConfig& cfg);

    std::vector<std::pair<std::string, Tensor*>> all_tensors();
    std::vector<std::pair<std::string, const Tensor*>> all_tensors() const;
    std::vector<std::pair<std::string, const Tensor*>> body_tensors() const;
    std::vector<std::pair<std::string, Tensor*>> body_tensors();

    /// Flattened body gradient dimension (order matches body_tensors()).
    size_t body_dim() const;
};

/// Canonical body tensor list; fixes sketch-plan order and feature layout.
std::vector<TensorSpec> body_tensor_specs(const ModelConfig& cfg);

struct Example {
    std::vector<uint32_t> tokens;
    std::vector<uint32_t> targets;
    std::vector<uint8_t> loss_mask;
    uint32_t readout_step = 0;  // 1-based; 0 means "at loop_horizon"
    std::string id;
};

/// Activation cache for one forward pass, one entry per loop step.
struct StepCache {
    std::vector<double> x;         // L*d block input (after injection)
    std::vector<double> ln1_xhat;  // L*d
    std::vector<double> ln1_istd;  // L
    std::vector<double> u;         // L*d
    std::vector<double> q, k, v;   // L*d
    std::vector<double> attn;      // H*L*L row-softmax weights
    std::vector<double> att_out;   // L*d
    std::vector<double> o;         // L*d
    std::vector<double> y;         // L*d
    std::vector<double> ln2_xhat;  // L*d
    std::vector<double> ln2_istd;  // L
    std::vector<double> w;         // L*d
    std::vector<double> z;         // L*d_ff
    std::vector<double> act;       // L*d_ff
    std::vector<double> r;         // L*d
    std::vector<double> h;         // L*d
};

struct StepTrace {
    std::vector<double> h0;       // L*d read-in output
    std::vector<StepCache> steps; // loop_horizon entries
    std::vector<double> h_norm;   // L*d RMS-normalized readout input
    std::vector<double> rms;      // L
    std::vector<double> logits;   // L*vocab at the readout step
    std::vector<double> probs;    // L*vocab
    double loss = 0.0;
    uint32_t readout_step = 0;
    uint32_t n_masked = 0;
};

/// Receives the per-step, per-token backward factors as they are produced.
/// Matrix parameters get (delta, activation) pairs whose outer products sum
/// to the per-step gradient; vector parameters get per-token gradient
/// vectors. tensor_idx indexes body_tensor_specs() order.
class FactorSink {
public:
    virtual ~FactorSink() = default;
    virtual void matrix_factor(uint32_t step, uint32_t tensor_idx, std::span<const double> delta,
                               std::span<const double> activation) = 0;
    virtual void vector_factor(uint32_t step, uint32_t tensor_idx,
                               std::span<const double> delta) = 0;
};

/// Per-step, per-tensor token factor lists; the materialized mirror of what
/// a FactorSink streams.
struct StepFactors {
    struct TokenFactor {
        std::vector<double> delta;
        std::vector<double> activation;  // empty for vector parameters
    };
    uint32_t tau = 0;
    uint32_t n_tensors = 0;
    // [step-1][tensor_idx] -> factors in token order; empty when the step
    // contributed nothing (beyond readout, truncated away).
    std::vector<std::vector<std::vector<TokenFactor>>> factors;
};

StepTrace forward(const Parameters& params, const ModelConfig& cfg, const Example& ex);

/// Full BPTT (or truncated when cfg.truncation_k > 0). Factors stream to
/// `sink` per step and token; total parameter gradients accumulate into
/// `grads` when non-null (read-in and read-out included). Either output may
/// be null.
void backward_pass(const StepTrace& trace, const Parameters& params, const ModelConfig& cfg,
                   const Example& ex, FactorSink* sink, Parameters* grads);

/// Runs backward_pass with a collecting sink and returns the factor lists.
StepFactors backward_with_hooks(const StepTrace& trace, const Parameters& params,
                                const ModelConfig& cfg, const Example& ex);

/// phi_t per tensor, materialized: sum_j delta (x) a for matrices, sum_j
/// delta for vectors. Index [step-1] -> body-ordered TensorMap.
std::vector<TensorMap> materialize_step_gradients(const StepFactors& factors,
                                                  const ModelConfig& cfg);

/// Convenience oracle path: per-example total gradient of the body tensors.
Parameters example_gradients(const Parameters& params, const ModelConfig& cfg, const Example& ex);

/// Flattens body tensors of `grads` in canonical order.
std::vector<double> flatten_body(const Parameters& grads);

struct Checkpoint {
    Parameters params;
    double eta = 0.0;
    uint64_t step = 0;
};

/// One optimizer step's worth of examples. The batch carries its own
/// config so a driver can vary sequence length and loop horizon per batch;
/// parameter shapes do not depend on either.
struct Batch {
    ModelConfig cfg;
    std::vector<Example> examples;
};

/// Supplies the batch for optimizer step `step` (0-based).
using BatchProvider = std::function<Batch(uint64_t step)>;

struct TrainOptions {
    uint32_t checkpoint_every = 100;
    bool keep_final = true;
    std::function<void(uint64_t step, double loss)> on_step;  // optional
};

/// Plain SGD: w <- w - eta_k * grad(mean batch loss). Deterministic given
/// the provider's seeding; aborts with a diagnostic if the loss diverges.
std::vector<Checkpoint> train_sgd(const BatchProvider& batches, const ModelConfig& cfg,
                                  Parameters& params, std::span<const double> etas,
                                  const TrainOptions& opts);

}  // namespace sdikit
