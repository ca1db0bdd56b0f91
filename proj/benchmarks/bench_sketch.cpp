#include <benchmark/benchmark.h>

#include <random>

#include "sdikit/engine.hpp"
#include "sdikit/fft.hpp"
#include "sdikit/model.hpp"
#include "sdikit/random.hpp"
#include "sdikit/sketch.hpp"

using namespace sdikit;

namespace {

std::vector<double> gauss_vec(uint64_t seed, size_t n) {
    std::mt19937_64 rng(seed);
    GaussianDraw g(rng);
    std::vector<double> v(n);
    for (auto& x : v) x = g();
    return v;
}

CountSketchTables make_cs(uint32_t d, uint32_t m) {
    std::mt19937_64 rng(1);
    const KWiseHash h = KWiseHash::sample(1, rng);
    const KWiseHash s = KWiseHash::sample(3, rng);
    return CountSketchTables(h, s, d, m);
}

TensorSketchTables make_ts(uint32_t d0, uint32_t d1, uint32_t m) {
    std::mt19937_64 rng(2);
    const KWiseHash h1 = KWiseHash::sample(1, rng);
    const KWiseHash s1 = KWiseHash::sample(3, rng);
    const KWiseHash h2 = KWiseHash::sample(1, rng);
    const KWiseHash s2 = KWiseHash::sample(3, rng);
    return TensorSketchTables(h1, s1, h2, s2, d0, d1, m);
}

}  // namespace

static void BM_Fft(benchmark::State& state) {
    const size_t m = static_cast<size_t>(state.range(0));
    std::vector<std::complex<double>> a(m);
    const auto seedvals = gauss_vec(3, m);
    for (size_t i = 0; i < m; ++i) a[i] = {seedvals[i], 0.0};
    for (auto _ : state) {
        auto copy = a;
        fft_inplace(copy, false);
        benchmark::DoNotOptimize(copy);
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Fft)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

static void BM_CountSketch(benchmark::State& state) {
    const uint32_t d = static_cast<uint32_t>(state.range(0));
    const uint32_t m = 256;
    const auto cs = make_cs(d, m);
    const auto x = gauss_vec(5, d);
    std::vector<double> out(m);
    for (auto _ : state) {
        std::fill(out.begin(), out.end(), 0.0);
        cs.accumulate(x, out);
        benchmark::DoNotOptimize(out);
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CountSketch)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

static void BM_TensorSketchPair(benchmark::State& state) {
    const uint32_t m = static_cast<uint32_t>(state.range(0));
    const uint32_t d = 64;
    const auto ts = make_ts(d, d, m);
    const auto u = gauss_vec(6, d);
    const auto v = gauss_vec(7, d);
    for (auto _ : state) {
        auto sk = ts.pair_sketch(u, v);
        benchmark::DoNotOptimize(sk);
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_TensorSketchPair)->RangeMultiplier(2)->Range(256, 8192)->Complexity();

static void BM_TensorSketchOuterSum(benchmark::State& state) {
    // one loop step's worth of token factors for a single matrix tensor
    const uint32_t L = static_cast<uint32_t>(state.range(0));
    const uint32_t d = 64, m = 2048;
    const auto ts = make_ts(d, d, m);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    for (uint32_t l = 0; l < L; ++l) {
        pairs.emplace_back(gauss_vec(100 + l, d), gauss_vec(200 + l, d));
    }
    for (auto _ : state) {
        auto sk = ts.outer_sum_sketch(pairs);
        benchmark::DoNotOptimize(sk);
    }
}
BENCHMARK(BM_TensorSketchOuterSum)->Arg(8)->Arg(16)->Arg(32);

static void BM_ForwardBackward(benchmark::State& state) {
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.d_model = static_cast<uint32_t>(state.range(0));
    cfg.n_heads = 4;
    cfg.seq_len = 14;
    cfg.loop_horizon = 14;
    cfg.nonlinearity = Nonlinearity::relu;
    cfg.seed = 3;
    const Parameters params = Parameters::init(cfg);
    std::mt19937_64 rng(4);
    Example ex;
    ex.tokens.resize(cfg.seq_len);
    ex.targets.resize(cfg.seq_len);
    ex.loss_mask.assign(cfg.seq_len, 0);
    for (auto& t : ex.tokens) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
    for (auto& t : ex.targets) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
    ex.loss_mask[12] = 1;
    Parameters grads = Parameters::zeros_like(cfg);
    for (auto _ : state) {
        const StepTrace trace = forward(params, cfg, ex);
        backward_pass(trace, params, cfg, ex, nullptr, &grads);
        benchmark::DoNotOptimize(grads);
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64);

static void BM_FeaturizeExample(benchmark::State& state) {
    const uint32_t m = static_cast<uint32_t>(state.range(0));
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.seq_len = 12;
    cfg.loop_horizon = 8;
    cfg.nonlinearity = Nonlinearity::relu;
    cfg.seed = 5;
    const Parameters params = Parameters::init(cfg);
    const auto plan = SketchPlan::make(6, m, body_tensor_specs(cfg));
    std::mt19937_64 rng(7);
    std::vector<Example> batch(1);
    batch[0].tokens.resize(cfg.seq_len);
    batch[0].targets.resize(cfg.seq_len);
    batch[0].loss_mask.assign(cfg.seq_len, 1);
    for (auto& t : batch[0].tokens) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
    for (auto& t : batch[0].targets) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
    for (auto _ : state) {
        auto feats = featurize_batch(params, cfg, batch, plan, nullptr);
        benchmark::DoNotOptimize(feats);
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FeaturizeExample)->RangeMultiplier(2)->Range(256, 4096)->Complexity();

BENCHMARK_MAIN();
