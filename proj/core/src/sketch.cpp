#include "sdikit/sketch.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sdikit/fft.hpp"

namespace sdikit {

CountSketchTables::CountSketchTables(const KWiseHash& h, const KWiseHash& s, uint32_t domain,
                                     uint32_t m)
    : m_(m) {
    bucket_.resize(domain);
    sign_.resize(domain);
    for (uint32_t i = 0; i < domain; ++i) {
        bucket_[i] = h.bucket(i, m);
        sign_[i] = static_cast<double>(s.sign(i));
    }
}

void CountSketchTables::accumulate(std::span<const double> x, std::span<double> out) const {
    if (x.size() != bucket_.size()) {
        throw std::invalid_argument("count_sketch: input length does not match hash domain");
    }
    if (out.size() != m_) {
        throw std::invalid_argument("count_sketch: output length does not match sketch dim");
    }
    for (size_t i = 0; i < x.size(); ++i) {
        out[bucket_[i]] += sign_[i] * x[i];
    }
}

std::vector<double> CountSketchTables::apply(std::span<const double> x) const {
    std::vector<double> out(m_, 0.0);
    accumulate(x, out);
    return out;
}

TensorSketchTables::TensorSketchTables(const KWiseHash& h1, const KWiseHash& s1,
                                       const KWiseHash& h2, const KWiseHash& s2, uint32_t d0,
                                       uint32_t d1, uint32_t m)
    : m_(m), cs_out_(h1, s1, d0, m), cs_in_(h2, s2, d1, m) {
    if (!is_pow2(m)) {
        throw std::invalid_argument("tensor_sketch: m must be a power of two");
    }
}

size_t TensorSketchTables::Workspace::bytes() const {
    return sizeof(std::complex<double>) * (freq_acc.capacity() + fu.capacity() + fv.capacity()) +
           sizeof(double) * (cs_u.capacity() + cs_v.capacity());
}

void TensorSketchTables::begin(Workspace& ws) const {
    ws.freq_acc.assign(m_, {0.0, 0.0});
    ws.fu.resize(m_);
    ws.fv.resize(m_);
    ws.cs_u.resize(m_);
    ws.cs_v.resize(m_);
}

void TensorSketchTables::add_pair(Workspace& ws, std::span<const double> u,
                                  std::span<const double> v) const {
    std::fill(ws.cs_u.begin(), ws.cs_u.end(), 0.0);
    std::fill(ws.cs_v.begin(), ws.cs_v.end(), 0.0);
    cs_out_.accumulate(u, ws.cs_u);
    cs_in_.accumulate(v, ws.cs_v);
    for (uint32_t i = 0; i < m_; ++i) ws.fu[i] = {ws.cs_u[i], 0.0};
    for (uint32_t i = 0; i < m_; ++i) ws.fv[i] = {ws.cs_v[i], 0.0};
    fft_inplace(ws.fu, false);
    fft_inplace(ws.fv, false);
    for (uint32_t i = 0; i < m_; ++i) ws.freq_acc[i] += ws.fu[i] * ws.fv[i];
}

void TensorSketchTables::finish(Workspace& ws, std::span<double> out) const {
    fft_inplace(ws.freq_acc, true);
    for (uint32_t i = 0; i < m_; ++i) out[i] += ws.freq_acc[i].real();
}

std::vector<double> TensorSketchTables::pair_sketch(std::span<const double> u,
                                                    std::span<const double> v) const {
    Workspace ws;
    begin(ws);
    add_pair(ws, u, v);
    std::vector<double> out(m_, 0.0);
    finish(ws, out);
    return out;
}

std::vector<double> TensorSketchTables::outer_sum_sketch(
    std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs) const {
    std::vector<double> out(m_, 0.0);
    if (pairs.empty()) return out;
    Workspace ws;
    begin(ws);
    for (const auto& [u, v] : pairs) add_pair(ws, u, v);
    finish(ws, out);
    return out;
}

std::vector<double> TensorSketchTables::apply_matrix(const Tensor& x) const {
    if (!x.is_matrix() || x.rows() != d_out() || x.cols() != d_in()) {
        throw std::invalid_argument("tensor_sketch: matrix shape does not match hash domains");
    }
    std::vector<double> out(m_, 0.0);
    const uint32_t rows = x.rows(), cols = x.cols();
    for (uint32_t i = 0; i < rows; ++i) {
        const uint32_t hi = cs_out_.bucket_of(i);
        const double si = cs_out_.sign_of(i);
        for (uint32_t j = 0; j < cols; ++j) {
            uint32_t alpha = hi + cs_in_.bucket_of(j);
            if (alpha >= m_) alpha -= m_;
            out[alpha] += si * cs_in_.sign_of(j) * x(i, j);
        }
    }
    return out;
}

namespace {

// Component streams inside one tensor's subseed; fixed so serialized plans
// rebuild bit-identically.
enum HashRole : uint64_t { kBucket1 = 0, kSign1 = 1, kBucket2 = 2, kSign2 = 3 };

KWiseHash sample_hash(uint64_t sub, HashRole role, int degree) {
    std::mt19937_64 rng(subseed(sub, static_cast<uint64_t>(role)));
    return KWiseHash::sample(degree, rng);
}

uint64_t fingerprint(uint64_t seed, uint32_t m, const std::vector<SketchPlan::Entry>& entries) {
    uint64_t h = splitmix64(seed ^ (static_cast<uint64_t>(m) << 32));
    for (const auto& e : entries) {
        uint64_t nh = 1469598103934665603ULL;
        for (char c : e.spec.name) nh = (nh ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
        h = splitmix64(h ^ nh ^ splitmix64(e.subseed) ^ static_cast<uint64_t>(e.spec.kind));
    }
    return h;
}

}  // namespace

SketchPlan SketchPlan::assemble(uint64_t seed, uint32_t m, std::span<const TensorSpec> specs,
                                std::span<const uint64_t> subseeds) {
    if (!is_pow2(m) || m < 2) {
        throw std::invalid_argument("sketch plan: m must be a power of two >= 2");
    }
    if (specs.empty()) {
        throw std::invalid_argument("sketch plan: empty tensor collection");
    }
    std::set<std::string> seen;
    SketchPlan plan;
    plan.seed_ = seed;
    plan.m_ = m;
    plan.entries_.reserve(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        const TensorSpec& spec = specs[i];
        if (!seen.insert(spec.name).second) {
            throw std::invalid_argument("sketch plan: duplicate tensor name " + spec.name);
        }
        Entry e;
        e.spec = spec;
        e.subseed = subseeds[i];
        if (spec.kind == SketchKind::vector_count_sketch) {
            if (spec.d0 == 0 || spec.d1 != 0) {
                throw std::invalid_argument("sketch plan: bad vector spec for " + spec.name);
            }
            e.cs = CountSketchTables(sample_hash(e.subseed, kBucket1, 1),
                                     sample_hash(e.subseed, kSign1, 3), spec.d0, m);
        } else {
            if (spec.d0 == 0 || spec.d1 == 0) {
                throw std::invalid_argument("sketch plan: bad matrix spec for " + spec.name);
            }
            e.ts = TensorSketchTables(sample_hash(e.subseed, kBucket1, 1),
                                      sample_hash(e.subseed, kSign1, 3),
                                      sample_hash(e.subseed, kBucket2, 1),
                                      sample_hash(e.subseed, kSign2, 3), spec.d0, spec.d1, m);
        }
        plan.entries_.push_back(std::move(e));
    }
    plan.plan_id_ = fingerprint(seed, m, plan.entries_);
    return plan;
}

SketchPlan SketchPlan::make(uint64_t seed, uint32_t m, std::span<const TensorSpec> specs) {
    std::vector<uint64_t> subs(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) subs[i] = subseed(seed, i);
    return assemble(seed, m, specs, subs);
}

const SketchPlan::Entry& SketchPlan::entry(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.spec.name == name) return e;
    }
    throw std::invalid_argument("sketch plan: unknown tensor " + name);
}

std::string SketchPlan::to_json() const {
    nlohmann::json j;
    j["seed"] = seed_;
    j["m"] = m_;
    auto& tensors = j["tensors"] = nlohmann::json::array();
    for (const auto& e : entries_) {
        tensors.push_back({{"name", e.spec.name},
                           {"kind", e.spec.kind == SketchKind::vector_count_sketch
                                        ? "vector"
                                        : "matrix"},
                           {"subseed", e.subseed}});
    }
    return j.dump(2);
}

SketchPlan SketchPlan::from_json(const std::string& text, std::span<const TensorSpec> specs) {
    nlohmann::json j = nlohmann::json::parse(text);
    const uint64_t seed = j.at("seed").get<uint64_t>();
    const uint32_t m = j.at("m").get<uint32_t>();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != specs.size()) {
        throw std::invalid_argument("sketch plan: tensor count mismatch on rebind");
    }
    std::vector<uint64_t> subs(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at("name").get<std::string>() != specs[i].name) {
            throw std::invalid_argument("sketch plan: tensor name mismatch on rebind");
        }
        const bool is_vec = t.at("kind").get<std::string>() == "vector";
        if (is_vec != (specs[i].kind == SketchKind::vector_count_sketch)) {
            throw std::invalid_argument("sketch plan: tensor kind mismatch on rebind");
        }
        subs[i] = t.at("subseed").get<uint64_t>();
    }
    return assemble(seed, m, specs, subs);
}

double dot(const SketchedVector& a, const SketchedVector& b) {
    if (a.plan_id != b.plan_id) {
        throw std::invalid_argument("sketched dot: operands come from different plans");
    }
    if (a.values.size() != b.values.size()) {
        throw std::invalid_argument("sketched dot: length mismatch");
    }
    double s = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

SketchedVector global_sketch(const TensorMap& grads, const SketchPlan& plan) {
    if (grads.size() != plan.tensor_count()) {
        throw std::invalid_argument("global_sketch: tensor count does not match plan");
    }
    SketchedVector out;
    out.plan_id = plan.plan_id();
    out.values.assign(plan.feature_dim(), 0.0);
    const uint32_t m = plan.sketch_dim();
    size_t offset = 0;
    for (const auto& e : plan.entries()) {
        const Tensor* g = find_tensor(grads, e.spec.name);
        if (g == nullptr) {
            throw std::invalid_argument("global_sketch: missing tensor " + e.spec.name);
        }
        std::span<double> block(out.values.data() + offset, m);
        if (e.spec.kind == SketchKind::vector_count_sketch) {
            if (!g->is_vector() || g->rows() != e.spec.d0) {
                throw std::invalid_argument("global_sketch: shape mismatch for " + e.spec.name);
            }
            e.cs.accumulate(std::span<const double>(g->data), block);
        } else {
            auto sk = e.ts.apply_matrix(*g);
            std::copy(sk.begin(), sk.end(), block.begin());
        }
        offset += m;
    }
    return out;
}

}  // namespace sdikit
