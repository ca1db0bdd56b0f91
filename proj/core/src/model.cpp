#include "sdikit/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sdikit/random.hpp"

namespace sdikit {

namespace {

constexpr double kLnEps = 1e-5;

// Y[l] = W a_l (+ bias), W row-major [out x in], tokens stacked row-major.
void map_tokens(const Tensor& w, const double* x, uint32_t L, uint32_t in, uint32_t out, double* y,
                const double* bias) {
    for (uint32_t l = 0; l < L; ++l) {
        const double* xl = x + static_cast<size_t>(l) * in;
        double* yl = y + static_cast<size_t>(l) * out;
        for (uint32_t o = 0; o < out; ++o) {
            const double* wrow = w.data.data() + static_cast<size_t>(o) * in;
            double acc = bias ? bias[o] : 0.0;
            for (uint32_t i = 0; i < in; ++i) acc += wrow[i] * xl[i];
            yl[o] = acc;
        }
    }
}

// Y[l] += W^T g_l : y[l][i] += sum_o W[o][i] g[l][o]
void map_tokens_transpose(const Tensor& w, const double* g, uint32_t L, uint32_t in, uint32_t out,
                          double* y) {
    for (uint32_t l = 0; l < L; ++l) {
        const double* gl = g + static_cast<size_t>(l) * out;
        double* yl = y + static_cast<size_t>(l) * in;
        for (uint32_t o = 0; o < out; ++o) {
            const double go = gl[o];
            if (go == 0.0) continue;
            const double* wrow = w.data.data() + static_cast<size_t>(o) * in;
            for (uint32_t i = 0; i < in; ++i) yl[i] += go * wrow[i];
        }
    }
}

// dW[o] += sum_l g[l][o] * a[l]
void accum_outer(const double* g, const double* a, uint32_t L, uint32_t out, uint32_t in,
                 Tensor& dw) {
    for (uint32_t l = 0; l < L; ++l) {
        const double* gl = g + static_cast<size_t>(l) * out;
        const double* al = a + static_cast<size_t>(l) * in;
        for (uint32_t o = 0; o < out; ++o) {
            const double go = gl[o];
            if (go == 0.0) continue;
            double* wrow = dw.data.data() + static_cast<size_t>(o) * in;
            for (uint32_t i = 0; i < in; ++i) wrow[i] += go * al[i];
        }
    }
}

void layernorm_forward(const double* x, uint32_t L, uint32_t d, const Tensor& gain,
                       const Tensor& bias, double* xhat, double* istd, double* out) {
    for (uint32_t l = 0; l < L; ++l) {
        const double* xl = x + static_cast<size_t>(l) * d;
        double* hl = xhat + static_cast<size_t>(l) * d;
        double* ol = out + static_cast<size_t>(l) * d;
        double mean = 0.0;
        for (uint32_t c = 0; c < d; ++c) mean += xl[c];
        mean /= d;
        double var = 0.0;
        for (uint32_t c = 0; c < d; ++c) {
            const double dv = xl[c] - mean;
            var += dv * dv;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + kLnEps);
        istd[l] = is;
        for (uint32_t c = 0; c < d; ++c) {
            hl[c] = (xl[c] - mean) * is;
            ol[c] = gain[c] * hl[c] + bias[c];
        }
    }
}

// dx from dxhat: dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat o xhat))
void layernorm_backward(const double* dxhat, const double* xhat, const double* istd, uint32_t L,
                        uint32_t d, double* dx) {
    for (uint32_t l = 0; l < L; ++l) {
        const double* dh = dxhat + static_cast<size_t>(l) * d;
        const double* xh = xhat + static_cast<size_t>(l) * d;
        double* dxl = dx + static_cast<size_t>(l) * d;
        double s1 = 0.0, s2 = 0.0;
        for (uint32_t c = 0; c < d; ++c) {
            s1 += dh[c];
            s2 += dh[c] * xh[c];
        }
        s1 /= d;
        s2 /= d;
        const double is = istd[l];
        for (uint32_t c = 0; c < d; ++c) {
            dxl[c] += is * (dh[c] - s1 - xh[c] * s2);
        }
    }
}

double activation(Nonlinearity nl, double z) {
    if (nl == Nonlinearity::relu) return z > 0.0 ? z : 0.0;
    // exact gelu: z * Phi(z)
    return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2));
}

double activation_grad(Nonlinearity nl, double z) {
    if (nl == Nonlinearity::relu) return z > 0.0 ? 1.0 : 0.0;
    const double phi = std::exp(-0.5 * z * z) * 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * phi;
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (loop_horizon < 1) throw std::invalid_argument("model config: loop_horizon must be >= 1");
    if (truncation_k > loop_horizon) {
        throw std::invalid_argument("model config: truncation_k must be <= loop_horizon");
    }
    if (vocab_size == 0 || seq_len == 0) {
        throw std::invalid_argument("model config: vocab_size and seq_len must be positive");
    }
}

Parameters Parameters::zeros_like(const ModelConfig& cfg) {
    cfg.validate();
    const uint32_t d = cfg.d_model, ff = cfg.d_ff(), v = cfg.vocab_size;
    Parameters p;
    p.w_in = Tensor::matrix(v, d);
    p.ln1_g = Tensor::vector(d);
    p.ln1_b = Tensor::vector(d);
    p.attn_wq = Tensor::matrix(d, d);
    p.attn_wk = Tensor::matrix(d, d);
    p.attn_wv = Tensor::matrix(d, d);
    p.attn_wo = Tensor::matrix(d, d);
    p.ln2_g = Tensor::vector(d);
    p.ln2_b = Tensor::vector(d);
    p.mlp_w1 = Tensor::matrix(ff, d);
    p.mlp_b1 = Tensor::vector(ff);
    p.mlp_w2 = Tensor::matrix(d, ff);
    p.mlp_b2 = Tensor::vector(d);
    p.w_out = Tensor::matrix(v, d);
    p.b_out = Tensor::vector(v);
    return p;
}

Parameters Parameters::init(const ModelConfig& cfg) {
    Parameters p = zeros_like(cfg);
    std::mt19937_64 rng(subseed(cfg.seed, 0x5d1));
    GaussianDraw gauss(rng);
    auto fill_gauss = [&](Tensor& t, double std) {
        for (auto& x : t.data) x = gauss() * std;
    };
    const double std_w = 0.08;
    // residual-exit maps scaled down so tau applications stay tame
    const double std_res = std_w / std::sqrt(2.0 * cfg.loop_horizon);
    fill_gauss(p.w_in, 0.5);
    fill_gauss(p.attn_wq, std_w);
    fill_gauss(p.attn_wk, std_w);
    fill_gauss(p.attn_wv, std_w);
    fill_gauss(p.attn_wo, std_res);
    fill_gauss(p.mlp_w1, std_w);
    fill_gauss(p.mlp_w2, std_res);
    fill_gauss(p.w_out, std_w);
    p.ln1_g.fill(1.0);
    p.ln2_g.fill(1.0);
    return p;
}

std::vector<std::pair<std::string, Tensor*>> Parameters::all_tensors() {
    return {{"w_in", &w_in},       {"ln1_g", &ln1_g},     {"ln1_b", &ln1_b},
            {"attn_wq", &attn_wq}, {"attn_wk", &attn_wk}, {"attn_wv", &attn_wv},
            {"attn_wo", &attn_wo}, {"ln2_g", &ln2_g},     {"ln2_b", &ln2_b},
            {"mlp_w1", &mlp_w1},   {"mlp_b1", &mlp_b1},   {"mlp_w2", &mlp_w2},
            {"mlp_b2", &mlp_b2},   {"w_out", &w_out},     {"b_out", &b_out}};
}

std::vector<std::pair<std::string, const Tensor*>> Parameters::all_tensors() const {
    auto mut = const_cast<Parameters*>(this)->all_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Parameters::body_tensors() {
    return {{"ln1_g", &ln1_g},     {"ln1_b", &ln1_b},     {"attn_wq", &attn_wq},
            {"attn_wk", &attn_wk}, {"attn_wv", &attn_wv}, {"attn_wo", &attn_wo},
            {"ln2_g", &ln2_g},     {"ln2_b", &ln2_b},     {"mlp_w1", &mlp_w1},
            {"mlp_b1", &mlp_b1},   {"mlp_w2", &mlp_w2},   {"mlp_b2", &mlp_b2}};
}

std::vector<std::pair<std::string, const Tensor*>> Parameters::body_tensors() const {
    auto mut = const_cast<Parameters*>(this)->body_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
}

size_t Parameters::body_dim() const {
    size_t n = 0;
    for (const auto& [name, t] : body_tensors()) n += t->size();
    return n;
}

std::vector<TensorSpec> body_tensor_specs(const ModelConfig& cfg) {
    const uint32_t d = cfg.d_model, ff = cfg.d_ff();
    auto vec = [](std::string name, uint32_t dim) {
        return TensorSpec{std::move(name), SketchKind::vector_count_sketch, dim, 0};
    };
    auto mat = [](std::string name, uint32_t rows, uint32_t cols) {
        return TensorSpec{std::move(name), SketchKind::matrix_tensor_sketch, rows, cols};
    };
    return {vec("ln1_g", d),      vec("ln1_b", d),      mat("attn_wq", d, d),
            mat("attn_wk", d, d), mat("attn_wv", d, d), mat("attn_wo", d, d),
            vec("ln2_g", d),      vec("ln2_b", d),      mat("mlp_w1", ff, d),
            vec("mlp_b1", ff),    mat("mlp_w2", d, ff), vec("mlp_b2", d)};
}

StepTrace forward(const Parameters& params, const ModelConfig& cfg, const Example& ex) {
    cfg.validate();
    const uint32_t L = cfg.seq_len, d = cfg.d_model, ff = cfg.d_ff(), v = cfg.vocab_size;
    const uint32_t H = cfg.n_heads, hs = cfg.head_dim();
    const uint32_t tau = cfg.loop_horizon;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));

    if (ex.tokens.size() != L) throw std::invalid_argument("forward: token count != seq_len");
    for (uint32_t t : ex.tokens) {
        if (t >= v) throw std::invalid_argument("forward: token id out of vocabulary");
    }
    const uint32_t readout = ex.readout_step == 0 ? tau : ex.readout_step;
    if (readout < 1 || readout > tau) {
        throw std::invalid_argument("forward: readout step out of range");
    }
    if (ex.loss_mask.size() != L || ex.targets.size() != L) {
        throw std::invalid_argument("forward: loss mask / target length mismatch");
    }

    StepTrace trace;
    trace.readout_step = readout;
    trace.h0.assign(static_cast<size_t>(L) * d, 0.0);
    for (uint32_t j = 0; j < L; ++j) {
        const double* row = params.w_in.data.data() + static_cast<size_t>(ex.tokens[j]) * d;
        double* h0j = trace.h0.data() + static_cast<size_t>(j) * d;
        std::memcpy(h0j, row, sizeof(double) * d);
        if (cfg.sinusoidal_pos) {
            for (uint32_t c = 0; c < d; ++c) {
                const double rate = std::pow(10000.0, -static_cast<double>(c / 2 * 2) / d);
                h0j[c] += (c % 2 == 0) ? std::sin(j * rate) : std::cos(j * rate);
            }
        }
    }

    trace.steps.resize(tau);
    const std::vector<double>* h_prev = &trace.h0;
    for (uint32_t t = 0; t < tau; ++t) {
        StepCache& sc = trace.steps[t];
        const size_t nd = static_cast<size_t>(L) * d;
        sc.x.resize(nd);
        if (cfg.injection == Injection::additive) {
            for (size_t i = 0; i < nd; ++i) sc.x[i] = (*h_prev)[i] + trace.h0[i];
        } else {
            sc.x = *h_prev;
        }

        sc.ln1_xhat.resize(nd);
        sc.ln1_istd.resize(L);
        sc.u.resize(nd);
        layernorm_forward(sc.x.data(), L, d, params.ln1_g, params.ln1_b, sc.ln1_xhat.data(),
                          sc.ln1_istd.data(), sc.u.data());

        sc.q.resize(nd);
        sc.k.resize(nd);
        sc.v.resize(nd);
        map_tokens(params.attn_wq, sc.u.data(), L, d, d, sc.q.data(), nullptr);
        map_tokens(params.attn_wk, sc.u.data(), L, d, d, sc.k.data(), nullptr);
        map_tokens(params.attn_wv, sc.u.data(), L, d, d, sc.v.data(), nullptr);

        sc.attn.assign(static_cast<size_t>(H) * L * L, 0.0);
        sc.att_out.assign(nd, 0.0);
        std::vector<double> row(L);
        for (uint32_t h = 0; h < H; ++h) {
            const uint32_t off = h * hs;
            for (uint32_t i = 0; i < L; ++i) {
                const uint32_t jmax = cfg.causal ? i : L - 1;
                double mx = -1e300;
                for (uint32_t j = 0; j <= jmax; ++j) {
                    const double* qi = sc.q.data() + static_cast<size_t>(i) * d + off;
                    const double* kj = sc.k.data() + static_cast<size_t>(j) * d + off;
                    double s = 0.0;
                    for (uint32_t c = 0; c < hs; ++c) s += qi[c] * kj[c];
                    s *= scale;
                    row[j] = s;
                    if (s > mx) mx = s;
                }
                double denom = 0.0;
                for (uint32_t j = 0; j <= jmax; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    denom += row[j];
                }
                double* arow = sc.attn.data() + (static_cast<size_t>(h) * L + i) * L;
                double* oi = sc.att_out.data() + static_cast<size_t>(i) * d + off;
                for (uint32_t j = 0; j <= jmax; ++j) {
                    const double a = row[j] / denom;
                    arow[j] = a;
                    const double* vj = sc.v.data() + static_cast<size_t>(j) * d + off;
                    for (uint32_t c = 0; c < hs; ++c) oi[c] += a * vj[c];
                }
            }
        }

        sc.o.resize(nd);
        map_tokens(params.attn_wo, sc.att_out.data(), L, d, d, sc.o.data(), nullptr);
        sc.y.resize(nd);
        for (size_t i = 0; i < nd; ++i) sc.y[i] = sc.x[i] + sc.o[i];

        sc.ln2_xhat.resize(nd);
        sc.ln2_istd.resize(L);
        sc.w.resize(nd);
        layernorm_forward(sc.y.data(), L, d, params.ln2_g, params.ln2_b, sc.ln2_xhat.data(),
                          sc.ln2_istd.data(), sc.w.data());

        const size_t nf = static_cast<size_t>(L) * ff;
        sc.z.resize(nf);
        map_tokens(params.mlp_w1, sc.w.data(), L, d, ff, sc.z.data(), params.mlp_b1.data.data());
        sc.act.resize(nf);
        for (size_t i = 0; i < nf; ++i) sc.act[i] = activation(cfg.nonlinearity, sc.z[i]);
        sc.r.resize(nd);
        map_tokens(params.mlp_w2, sc.act.data(), L, ff, d, sc.r.data(), params.mlp_b2.data.data());

        sc.h.resize(nd);
        for (size_t i = 0; i < nd; ++i) sc.h[i] = sc.y[i] + sc.r[i];
        h_prev = &sc.h;
    }

    // read-out: parameter-free RMS normalization, then the affine map.
    // The residual stream grows roughly linearly in t under additive
    // injection, so the head needs a scale-stable input.
    const std::vector<double>& h_read = trace.steps[readout - 1].h;
    trace.h_norm.resize(static_cast<size_t>(L) * d);
    trace.rms.resize(L);
    for (uint32_t j = 0; j < L; ++j) {
        const double* hj = h_read.data() + static_cast<size_t>(j) * d;
        double ms = 0.0;
        for (uint32_t c = 0; c < d; ++c) ms += hj[c] * hj[c];
        const double r = std::sqrt(ms / d + kLnEps);
        trace.rms[j] = r;
        double* nj = trace.h_norm.data() + static_cast<size_t>(j) * d;
        for (uint32_t c = 0; c < d; ++c) nj[c] = hj[c] / r;
    }
    trace.logits.assign(static_cast<size_t>(L) * v, 0.0);
    map_tokens(params.w_out, trace.h_norm.data(), L, d, v, trace.logits.data(),
               params.b_out.data.data());

    trace.probs.assign(static_cast<size_t>(L) * v, 0.0);
    uint32_t n_masked = 0;
    double loss = 0.0;
    for (uint32_t j = 0; j < L; ++j) {
        const double* lj = trace.logits.data() + static_cast<size_t>(j) * v;
        double* pj = trace.probs.data() + static_cast<size_t>(j) * v;
        double mx = lj[0];
        for (uint32_t c = 1; c < v; ++c) mx = std::max(mx, lj[c]);
        double denom = 0.0;
        for (uint32_t c = 0; c < v; ++c) {
            pj[c] = std::exp(lj[c] - mx);
            denom += pj[c];
        }
        for (uint32_t c = 0; c < v; ++c) pj[c] /= denom;
        if (ex.loss_mask[j]) {
            if (ex.targets[j] >= v) {
                throw std::invalid_argument("forward: target id out of vocabulary");
            }
            loss -= std::log(std::max(pj[ex.targets[j]], 1e-300));
            ++n_masked;
        }
    }
    if (n_masked == 0) throw std::invalid_argument("forward: loss mask selects no positions");
    trace.loss = loss / n_masked;
    trace.n_masked = n_masked;
    return trace;
}

namespace {

// body tensor indices in body_tensor_specs() order
enum BodyIdx : uint32_t {
    kLn1G = 0,
    kLn1B = 1,
    kWq = 2,
    kWk = 3,
    kWv = 4,
    kWo = 5,
    kLn2G = 6,
    kLn2B = 7,
    kW1 = 8,
    kB1 = 9,
    kW2 = 10,
    kB2 = 11,
};

struct Scratch {
    std::vector<double> dh;      // L*d running dL/dh_t
    std::vector<double> dh0;     // L*d
    std::vector<double> dx;      // L*d
    std::vector<double> dy;      // L*d
    std::vector<double> dw;      // L*d
    std::vector<double> dz;      // L*ff
    std::vector<double> dact;    // L*ff
    std::vector<double> du;      // L*d
    std::vector<double> dq;      // L*d
    std::vector<double> dk;      // L*d
    std::vector<double> dv;      // L*d
    std::vector<double> datt;    // L*d
    std::vector<double> dxhat;   // L*d
    std::vector<double> vecfac;  // L*d (per-token vector-parameter grads)
    std::vector<double> drow;    // L softmax row work
};

}  // namespace

void backward_pass(const StepTrace& trace, const Parameters& params, const ModelConfig& cfg,
                   const Example& ex, FactorSink* sink, Parameters* grads) {
    const uint32_t L = cfg.seq_len, d = cfg.d_model, ff = cfg.d_ff(), v = cfg.vocab_size;
    const uint32_t H = cfg.n_heads, hs = cfg.head_dim();
    const uint32_t tau = cfg.loop_horizon;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    const uint32_t readout = trace.readout_step;
    if (trace.steps.size() != tau) {
        throw std::invalid_argument("backward: trace does not match config");
    }

    const size_t nd = static_cast<size_t>(L) * d;
    const size_t nf = static_cast<size_t>(L) * ff;
    Scratch s;
    s.dh.assign(nd, 0.0);
    s.dh0.assign(nd, 0.0);
    s.dx.resize(nd);
    s.dy.resize(nd);
    s.dw.resize(nd);
    s.dz.resize(nf);
    s.dact.resize(nf);
    s.du.resize(nd);
    s.dq.resize(nd);
    s.dk.resize(nd);
    s.dv.resize(nd);
    s.datt.resize(nd);
    s.dxhat.resize(nd);
    s.vecfac.resize(nd > nf ? nd : nf);
    s.drow.resize(L);

    // readout + cross-entropy
    std::vector<double> dlogits(static_cast<size_t>(L) * v, 0.0);
    for (uint32_t j = 0; j < L; ++j) {
        if (!ex.loss_mask[j]) continue;
        const double* pj = trace.probs.data() + static_cast<size_t>(j) * v;
        double* dlj = dlogits.data() + static_cast<size_t>(j) * v;
        const double inv = 1.0 / trace.n_masked;
        for (uint32_t c = 0; c < v; ++c) dlj[c] = pj[c] * inv;
        dlj[ex.targets[j]] -= inv;
    }
    if (grads) {
        accum_outer(dlogits.data(), trace.h_norm.data(), L, v, d, grads->w_out);
        for (uint32_t j = 0; j < L; ++j) {
            const double* dlj = dlogits.data() + static_cast<size_t>(j) * v;
            for (uint32_t c = 0; c < v; ++c) grads->b_out[c] += dlj[c];
        }
    }
    {
        // through the RMS normalization of the readout
        std::vector<double> dnorm(nd, 0.0);
        map_tokens_transpose(params.w_out, dlogits.data(), L, d, v, dnorm.data());
        for (uint32_t j = 0; j < L; ++j) {
            const double* dn = dnorm.data() + static_cast<size_t>(j) * d;
            const double* y = trace.h_norm.data() + static_cast<size_t>(j) * d;
            double* dh = s.dh.data() + static_cast<size_t>(j) * d;
            double inner = 0.0;
            for (uint32_t c = 0; c < d; ++c) inner += dn[c] * y[c];
            inner /= d;
            const double inv_r = 1.0 / trace.rms[j];
            for (uint32_t c = 0; c < d; ++c) dh[c] = inv_r * (dn[c] - y[c] * inner);
        }
    }

    // truncated BPTT keeps only the last truncation_k steps
    const uint32_t stop =
        cfg.truncation_k > 0 ? (tau - cfg.truncation_k + 1) : 1;

    auto emit_matrix = [&](uint32_t t, uint32_t idx, const double* delta, const double* act,
                           uint32_t out, uint32_t in, Tensor* dw_tensor) {
        if (sink) {
            for (uint32_t j = 0; j < L; ++j) {
                sink->matrix_factor(t, idx,
                                    std::span<const double>(delta + static_cast<size_t>(j) * out, out),
                                    std::span<const double>(act + static_cast<size_t>(j) * in, in));
            }
        }
        if (dw_tensor) accum_outer(delta, act, L, out, in, *dw_tensor);
    };
    auto emit_vector = [&](uint32_t t, uint32_t idx, const double* delta, uint32_t dim,
                           Tensor* db_tensor) {
        if (sink) {
            for (uint32_t j = 0; j < L; ++j) {
                sink->vector_factor(t, idx,
                                    std::span<const double>(delta + static_cast<size_t>(j) * dim, dim));
            }
        }
        if (db_tensor) {
            for (uint32_t j = 0; j < L; ++j) {
                const double* dj = delta + static_cast<size_t>(j) * dim;
                for (uint32_t c = 0; c < dim; ++c) db_tensor->data[c] += dj[c];
            }
        }
    };

    for (uint32_t t = readout; t >= stop && t >= 1; --t) {
        const StepCache& sc = trace.steps[t - 1];

        // h = y + r
        const double* dh = s.dh.data();
        std::memcpy(s.dy.data(), dh, sizeof(double) * nd);

        // r = W2 act + b2
        emit_matrix(t, kW2, dh, sc.act.data(), d, ff, grads ? &grads->mlp_w2 : nullptr);
        emit_vector(t, kB2, dh, d, grads ? &grads->mlp_b2 : nullptr);
        std::fill(s.dact.begin(), s.dact.end(), 0.0);
        map_tokens_transpose(params.mlp_w2, dh, L, ff, d, s.dact.data());

        // act = sigma(z)
        for (size_t i = 0; i < nf; ++i) {
            s.dz[i] = s.dact[i] * activation_grad(cfg.nonlinearity, sc.z[i]);
        }

        // z = W1 w + b1
        emit_matrix(t, kW1, s.dz.data(), sc.w.data(), ff, d, grads ? &grads->mlp_w1 : nullptr);
        emit_vector(t, kB1, s.dz.data(), ff, grads ? &grads->mlp_b1 : nullptr);
        std::fill(s.dw.begin(), s.dw.end(), 0.0);
        map_tokens_transpose(params.mlp_w1, s.dz.data(), L, d, ff, s.dw.data());

        // w = g2 o yhat + b2_ln
        for (size_t i = 0; i < nd; ++i) s.vecfac[i] = s.dw[i] * sc.ln2_xhat[i];
        emit_vector(t, kLn2G, s.vecfac.data(), d, grads ? &grads->ln2_g : nullptr);
        emit_vector(t, kLn2B, s.dw.data(), d, grads ? &grads->ln2_b : nullptr);
        for (size_t i = 0; i < nd; ++i) s.dxhat[i] = s.dw[i] * params.ln2_g[i % d];
        layernorm_backward(s.dxhat.data(), sc.ln2_xhat.data(), sc.ln2_istd.data(), L, d,
                           s.dy.data());

        // y = x + o
        std::memcpy(s.dx.data(), s.dy.data(), sizeof(double) * nd);

        // o = Wo att_out
        emit_matrix(t, kWo, s.dy.data(), sc.att_out.data(), d, d, grads ? &grads->attn_wo : nullptr);
        std::fill(s.datt.begin(), s.datt.end(), 0.0);
        map_tokens_transpose(params.attn_wo, s.dy.data(), L, d, d, s.datt.data());

        // attention
        std::fill(s.dq.begin(), s.dq.end(), 0.0);
        std::fill(s.dk.begin(), s.dk.end(), 0.0);
        std::fill(s.dv.begin(), s.dv.end(), 0.0);
        for (uint32_t h = 0; h < H; ++h) {
            const uint32_t off = h * hs;
            for (uint32_t i = 0; i < L; ++i) {
                const uint32_t jmax = cfg.causal ? i : L - 1;
                const double* arow = sc.attn.data() + (static_cast<size_t>(h) * L + i) * L;
                const double* gi = s.datt.data() + static_cast<size_t>(i) * d + off;

                // dv and dA
                double inner = 0.0;
                for (uint32_t j = 0; j <= jmax; ++j) {
                    const double* vj = sc.v.data() + static_cast<size_t>(j) * d + off;
                    double da = 0.0;
                    for (uint32_t c = 0; c < hs; ++c) da += gi[c] * vj[c];
                    s.drow[j] = da;
                    inner += arow[j] * da;
                    double* dvj = s.dv.data() + static_cast<size_t>(j) * d + off;
                    const double a = arow[j];
                    for (uint32_t c = 0; c < hs; ++c) dvj[c] += a * gi[c];
                }
                // softmax backward, then dq/dk
                double* dqi = s.dq.data() + static_cast<size_t>(i) * d + off;
                const double* qi = sc.q.data() + static_cast<size_t>(i) * d + off;
                for (uint32_t j = 0; j <= jmax; ++j) {
                    const double ds = arow[j] * (s.drow[j] - inner) * scale;
                    if (ds == 0.0) continue;
                    const double* kj = sc.k.data() + static_cast<size_t>(j) * d + off;
                    double* dkj = s.dk.data() + static_cast<size_t>(j) * d + off;
                    for (uint32_t c = 0; c < hs; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }

        emit_matrix(t, kWq, s.dq.data(), sc.u.data(), d, d, grads ? &grads->attn_wq : nullptr);
        emit_matrix(t, kWk, s.dk.data(), sc.u.data(), d, d, grads ? &grads->attn_wk : nullptr);
        emit_matrix(t, kWv, s.dv.data(), sc.u.data(), d, d, grads ? &grads->attn_wv : nullptr);

        std::fill(s.du.begin(), s.du.end(), 0.0);
        map_tokens_transpose(params.attn_wq, s.dq.data(), L, d, d, s.du.data());
        map_tokens_transpose(params.attn_wk, s.dk.data(), L, d, d, s.du.data());
        map_tokens_transpose(params.attn_wv, s.dv.data(), L, d, d, s.du.data());

        // u = g1 o xhat + b1_ln
        for (size_t i = 0; i < nd; ++i) s.vecfac[i] = s.du[i] * sc.ln1_xhat[i];
        emit_vector(t, kLn1G, s.vecfac.data(), d, grads ? &grads->ln1_g : nullptr);
        emit_vector(t, kLn1B, s.du.data(), d, grads ? &grads->ln1_b : nullptr);
        for (size_t i = 0; i < nd; ++i) s.dxhat[i] = s.du[i] * params.ln1_g[i % d];
        layernorm_backward(s.dxhat.data(), sc.ln1_xhat.data(), sc.ln1_istd.data(), L, d,
                           s.dx.data());

        // x = h_{t-1} (+ h0 under additive injection)
        if (cfg.injection == Injection::additive) {
            for (size_t i = 0; i < nd; ++i) s.dh0[i] += s.dx[i];
        }
        std::memcpy(s.dh.data(), s.dx.data(), sizeof(double) * nd);
    }

    // whatever reached below the truncation point is dropped with it
    if (stop == 1 && readout >= 1) {
        for (size_t i = 0; i < nd; ++i) s.dh0[i] += s.dh[i];
    }

    if (grads) {
        for (uint32_t j = 0; j < L; ++j) {
            double* row = grads->w_in.data.data() + static_cast<size_t>(ex.tokens[j]) * d;
            const double* gj = s.dh0.data() + static_cast<size_t>(j) * d;
            for (uint32_t c = 0; c < d; ++c) row[c] += gj[c];
        }
    }
}

namespace {

class CollectSink final : public FactorSink {
public:
    CollectSink(StepFactors& out) : out_(out) {}

    void matrix_factor(uint32_t step, uint32_t tensor_idx, std::span<const double> delta,
                       std::span<const double> act) override {
        auto& lst = out_.factors[step - 1][tensor_idx];
        lst.push_back({std::vector<double>(delta.begin(), delta.end()),
                       std::vector<double>(act.begin(), act.end())});
    }

    void vector_factor(uint32_t step, uint32_t tensor_idx,
                       std::span<const double> delta) override {
        auto& lst = out_.factors[step - 1][tensor_idx];
        lst.push_back({std::vector<double>(delta.begin(), delta.end()), {}});
    }

private:
    StepFactors& out_;
};

}  // namespace

StepFactors backward_with_hooks(const StepTrace& trace, const Parameters& params,
                                const ModelConfig& cfg, const Example& ex) {
    StepFactors out;
    out.tau = cfg.loop_horizon;
    out.n_tensors = static_cast<uint32_t>(body_tensor_specs(cfg).size());
    out.factors.assign(out.tau, std::vector<std::vector<StepFactors::TokenFactor>>(out.n_tensors));
    CollectSink sink(out);
    backward_pass(trace, params, cfg, ex, &sink, nullptr);
    return out;
}

std::vector<TensorMap> materialize_step_gradients(const StepFactors& factors,
                                                  const ModelConfig& cfg) {
    const auto specs = body_tensor_specs(cfg);
    std::vector<TensorMap> out(factors.tau);
    for (uint32_t t = 0; t < factors.tau; ++t) {
        TensorMap& map = out[t];
        map.reserve(specs.size());
        for (uint32_t idx = 0; idx < specs.size(); ++idx) {
            const TensorSpec& spec = specs[idx];
            Tensor g = spec.kind == SketchKind::vector_count_sketch
                           ? Tensor::vector(spec.d0)
                           : Tensor::matrix(spec.d0, spec.d1);
            for (const auto& f : factors.factors[t][idx]) {
                if (spec.kind == SketchKind::vector_count_sketch) {
                    for (uint32_t c = 0; c < spec.d0; ++c) g[c] += f.delta[c];
                } else {
                    for (uint32_t i = 0; i < spec.d0; ++i) {
                        const double di = f.delta[i];
                        if (di == 0.0) continue;
                        double* row = g.data.data() + static_cast<size_t>(i) * spec.d1;
                        for (uint32_t j = 0; j < spec.d1; ++j) row[j] += di * f.activation[j];
                    }
                }
            }
            map.emplace_back(spec.name, std::move(g));
        }
    }
    return out;
}

Parameters example_gradients(const Parameters& params, const ModelConfig& cfg, const Example& ex) {
    Parameters grads = Parameters::zeros_like(cfg);
    StepTrace trace = forward(params, cfg, ex);
    backward_pass(trace, params, cfg, ex, nullptr, &grads);
    return grads;
}

std::vector<double> flatten_body(const Parameters& grads) {
    std::vector<double> out;
    out.reserve(grads.body_dim());
    for (const auto& [name, t] : grads.body_tensors()) {
        out.insert(out.end(), t->data.begin(), t->data.end());
    }
    return out;
}

std::vector<Checkpoint> train_sgd(const BatchProvider& batches, const ModelConfig& cfg,
                                  Parameters& params, std::span<const double> etas,
                                  const TrainOptions& opts) {
    cfg.validate();
    std::vector<Checkpoint> checkpoints;
    Parameters grads = Parameters::zeros_like(cfg);
    for (uint64_t step = 0; step < etas.size(); ++step) {
        const Batch batch = batches(step);
        if (batch.examples.empty()) throw std::invalid_argument("train_sgd: empty batch");
        batch.cfg.validate();
        auto zero = [](Parameters& p) {
            for (auto& [n, t] : p.all_tensors()) t->fill(0.0);
        };
        zero(grads);
        double batch_loss = 0.0;
        for (const Example& ex : batch.examples) {
            StepTrace trace = forward(params, batch.cfg, ex);
            batch_loss += trace.loss;
            backward_pass(trace, params, batch.cfg, ex, nullptr, &grads);
        }
        batch_loss /= batch.examples.size();
        if (!std::isfinite(batch_loss)) {
            throw std::runtime_error("train_sgd: loss diverged (non-finite) at step " +
                                     std::to_string(step));
        }
        const double lr = etas[step] / batch.examples.size();
        auto pt = params.all_tensors();
        auto gt = grads.all_tensors();
        for (size_t i = 0; i < pt.size(); ++i) {
            double* w = pt[i].second->data.data();
            const double* g = gt[i].second->data.data();
            const size_t n = pt[i].second->size();
            for (size_t c = 0; c < n; ++c) w[c] -= lr * g[c];
        }
        if (opts.on_step) opts.on_step(step, batch_loss);
        const uint64_t done = step + 1;
        if ((opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0) ||
            (opts.keep_final && done == etas.size())) {
            if (!checkpoints.empty() && checkpoints.back().step == done) continue;
            checkpoints.push_back(Checkpoint{params, etas[step], done});
        }
    }
    return checkpoints;
}

}  // namespace sdikit
