#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdikit/hash.hpp"
#include "sdikit/tensor.hpp"

namespace sdikit {

enum class SketchKind : uint8_t {
    vector_count_sketch,
    matrix_tensor_sketch,
};

/// Shape+kind of one parameter tensor covered by a plan. d1 is 0 for
/// vector tensors.
struct TensorSpec {
    std::string name;
    SketchKind kind = SketchKind::vector_count_sketch;
    uint32_t d0 = 0;
    uint32_t d1 = 0;
};

/// CountSketch with hash tables materialized over a fixed domain [0, d):
/// out[h(i)] += s(i) * x[i]. h is 2-wise independent, s is 4-wise.
class CountSketchTables {
public:
    CountSketchTables() = default;
    CountSketchTables(const KWiseHash& h, const KWiseHash& s, uint32_t domain, uint32_t m);

    /// out[bucket[i]] += sign[i] * x[i]; out must have length m.
    void accumulate(std::span<const double> x, std::span<double> out) const;
    std::vector<double> apply(std::span<const double> x) const;

    uint32_t domain() const { return static_cast<uint32_t>(bucket_.size()); }
    uint32_t sketch_dim() const { return m_; }
    uint32_t bucket_of(uint32_t i) const { return bucket_[i]; }
    double sign_of(uint32_t i) const { return sign_[i]; }

private:
    uint32_t m_ = 0;
    std::vector<uint32_t> bucket_;
    std::vector<double> sign_;
};

/// TensorSketch of a d0 x d1 outer-product structure through the combined
/// hashes H(i,j) = h1(i)+h2(j) mod m and S(i,j) = s1(i)s2(j). The fast path
/// runs over factor pairs via FFT circular convolution; apply_matrix is the
/// definitional linear operator on an arbitrary matrix.
class TensorSketchTables {
public:
    TensorSketchTables() = default;
    TensorSketchTables(const KWiseHash& h1, const KWiseHash& s1, const KWiseHash& h2,
                       const KWiseHash& s2, uint32_t d0, uint32_t d1, uint32_t m);

    /// iFFT(FFT(CS1(u)) .* FFT(CS2(v))), real part.
    std::vector<double> pair_sketch(std::span<const double> u, std::span<const double> v) const;

    /// Sketch of sum_j u_j (x) v_j without materializing any d0 x d1 matrix.
    /// One inverse FFT total; empty input gives the zero vector.
    std::vector<double> outer_sum_sketch(
        std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs) const;

    /// Definitional double sum over all (i, j); O(d0*d1).
    std::vector<double> apply_matrix(const Tensor& x) const;

    uint32_t d_out() const { return cs_out_.domain(); }
    uint32_t d_in() const { return cs_in_.domain(); }
    uint32_t sketch_dim() const { return m_; }
    const CountSketchTables& out_tables() const { return cs_out_; }
    const CountSketchTables& in_tables() const { return cs_in_; }

    /// Streaming accumulation workspace; lets callers fold many factor
    /// pairs (and many sketches) through shared scratch buffers.
    struct Workspace {
        std::vector<std::complex<double>> freq_acc;
        std::vector<std::complex<double>> fu;
        std::vector<std::complex<double>> fv;
        std::vector<double> cs_u;
        std::vector<double> cs_v;
        size_t bytes() const;
    };

    void begin(Workspace& ws) const;
    void add_pair(Workspace& ws, std::span<const double> u, std::span<const double> v) const;
    /// Inverse transform of the accumulated spectrum, added into out.
    void finish(Workspace& ws, std::span<double> out) const;

private:
    uint32_t m_ = 0;
    CountSketchTables cs_out_;
    CountSketchTables cs_in_;
};

/// Frozen family of per-tensor hash functions defining the global sketch
/// map: vector tensors go through CountSketch, matrix tensors through
/// TensorSketch, all with output dimension m, concatenated in plan order.
class SketchPlan {
public:
    struct Entry {
        TensorSpec spec;
        uint64_t subseed = 0;
        CountSketchTables cs;   // vector kind
        TensorSketchTables ts;  // matrix kind
    };

    /// Builds the plan. Requirements: m a power of two (>= 2, hence even),
    /// at least one tensor, unique names. Hashes for distinct tensors come
    /// from distinct sub-seeds of `seed`; reconstruction is bit-identical.
    static SketchPlan make(uint64_t seed, uint32_t m, std::span<const TensorSpec> specs);

    uint32_t sketch_dim() const { return m_; }
    uint64_t seed() const { return seed_; }
    uint64_t plan_id() const { return plan_id_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t tensor_count() const { return entries_.size(); }
    /// Concatenated output length: tensor_count() * m.
    size_t feature_dim() const { return entries_.size() * static_cast<size_t>(m_); }

    const Entry& entry(const std::string& name) const;

    /// {seed, m, tensors: [{name, kind, subseed}]}.
    std::string to_json() const;
    /// Rebinds a serialized plan to concrete shapes; shapes must agree in
    /// name order and kind with the stored tensor list.
    static SketchPlan from_json(const std::string& text, std::span<const TensorSpec> specs);

private:
    static SketchPlan assemble(uint64_t seed, uint32_t m, std::span<const TensorSpec> specs,
                               std::span<const uint64_t> subseeds);

    uint64_t seed_ = 0;
    uint32_t m_ = 0;
    uint64_t plan_id_ = 0;
    std::vector<Entry> entries_;
};

/// A concatenated per-tensor sketch bound to the plan that produced it.
struct SketchedVector {
    std::vector<double> values;
    uint64_t plan_id = 0;
};

/// Dot product between sketches from the same plan.
double dot(const SketchedVector& a, const SketchedVector& b);

/// Sketches a named gradient collection. Names must match plan entries
/// exactly (no missing, no extra); output blocks follow plan order.
SketchedVector global_sketch(const TensorMap& grads, const SketchPlan& plan);

}  // namespace sdikit
