#include "sdikit/engine.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sdikit {

namespace {

double span_dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_plan_matches_body(const SketchPlan& plan, const ModelConfig& cfg) {
    const auto specs = body_tensor_specs(cfg);
    if (plan.tensor_count() != specs.size()) {
        throw std::invalid_argument("featurize: plan does not cover the body tensors");
    }
    const auto& entries = plan.entries();
    for (size_t i = 0; i < specs.size(); ++i) {
        const auto& e = entries[i].spec;
        if (e.name != specs[i].name || e.kind != specs[i].kind || e.d0 != specs[i].d0 ||
            e.d1 != specs[i].d1) {
            throw std::invalid_argument("featurize: plan entry mismatch at " + specs[i].name);
        }
    }
}

void check_compatible(const CheckpointFeatures& train, const CheckpointFeatures& test) {
    if (train.empty() || test.empty() || train.size() != test.size()) {
        throw std::invalid_argument("influence: train/test checkpoint lists differ");
    }
    for (size_t k = 0; k < train.size(); ++k) {
        const auto& a = train[k];
        const auto& b = test[k];
        if (a.mode != b.mode || a.tau != b.tau || a.dim != b.dim || a.plan_id != b.plan_id) {
            throw std::invalid_argument("influence: features disagree at checkpoint " +
                                        std::to_string(k));
        }
    }
}

/// FactorSink that folds every factor into per-step sketch blocks as it
/// arrives. Matrix tensors keep one open frequency-domain accumulation at
/// a time (emission is contiguous per (step, tensor)); vector tensors
/// accumulate straight into their block.
class SketchFeaturizer final : public FactorSink {
public:
    SketchFeaturizer(const SketchPlan& plan, uint32_t tau)
        : plan_(plan), tau_(tau), m_(plan.sketch_dim()) {
        dim_ = plan.feature_dim();
        features_.assign(static_cast<size_t>(tau_) * dim_, 0.0);
    }

    void reset() {
        std::fill(features_.begin(), features_.end(), 0.0);
        open_ = false;
    }

    void matrix_factor(uint32_t step, uint32_t tensor_idx, std::span<const double> delta,
                       std::span<const double> act) override {
        if (!open_ || step != open_step_ || tensor_idx != open_tensor_) {
            close_open();
            open_ = true;
            open_step_ = step;
            open_tensor_ = tensor_idx;
            plan_.entries()[tensor_idx].ts.begin(ws_);
        }
        plan_.entries()[tensor_idx].ts.add_pair(ws_, delta, act);
    }

    void vector_factor(uint32_t step, uint32_t tensor_idx, std::span<const double> delta) override {
        plan_.entries()[tensor_idx].cs.accumulate(delta, block(step, tensor_idx));
    }

    void close_open() {
        if (open_) {
            plan_.entries()[open_tensor_].ts.finish(ws_, block(open_step_, open_tensor_));
            open_ = false;
        }
    }

    std::span<double> block(uint32_t step, uint32_t tensor_idx) {
        return {features_.data() + (static_cast<size_t>(step - 1) * plan_.tensor_count() +
                                    tensor_idx) *
                                       m_,
                m_};
    }

    const std::vector<double>& features() const { return features_; }

    size_t live_bytes() const {
        return features_.capacity() * sizeof(double) + ws_.bytes();
    }
    size_t feature_bytes() const { return features_.capacity() * sizeof(double); }

private:
    const SketchPlan& plan_;
    uint32_t tau_;
    uint32_t m_;
    size_t dim_ = 0;
    std::vector<double> features_;
    TensorSketchTables::Workspace ws_;
    bool open_ = false;
    uint32_t open_step_ = 0;
    uint32_t open_tensor_ = 0;
};

}  // namespace

std::vector<double> StepFeatureMatrix::total_row(uint32_t example) const {
    std::vector<double> out(dim, 0.0);
    for (uint32_t t = 0; t < tau; ++t) {
        const auto row = step_row(example, t);
        for (size_t i = 0; i < dim; ++i) out[i] += row[i];
    }
    return out;
}

StepFeatureMatrix featurize_batch(const Parameters& params, const ModelConfig& cfg,
                                  std::span<const Example> examples, const SketchPlan& plan,
                                  FeaturizeStats* stats) {
    cfg.validate();
    check_plan_matches_body(plan, cfg);

    StepFeatureMatrix out;
    out.mode = StepFeatureMatrix::Mode::sketched;
    out.plan_id = plan.plan_id();
    out.m = plan.sketch_dim();
    out.n_tensors = static_cast<uint32_t>(plan.tensor_count());
    out.tau = cfg.loop_horizon;
    out.n_examples = static_cast<uint32_t>(examples.size());
    out.dim = plan.feature_dim();
    out.data.assign(static_cast<size_t>(out.n_examples) * out.tau * out.dim, 0.0);
    out.ids.reserve(examples.size());
    for (const Example& ex : examples) out.ids.push_back(ex.id);

    SketchFeaturizer sink(plan, cfg.loop_horizon);
    for (uint32_t e = 0; e < examples.size(); ++e) {
        sink.reset();
        StepTrace trace = forward(params, cfg, examples[e]);
        backward_pass(trace, params, cfg, examples[e], &sink, nullptr);
        sink.close_open();
        std::memcpy(out.data.data() + static_cast<size_t>(e) * out.tau * out.dim,
                    sink.features().data(), sizeof(double) * out.tau * out.dim);
        if (stats) {
            stats->peak_live_bytes_per_example =
                std::max(stats->peak_live_bytes_per_example, sink.live_bytes());
            stats->feature_bytes_per_example =
                std::max(stats->feature_bytes_per_example, sink.feature_bytes());
        }
    }
    return out;
}

StepFeatureMatrix exact_featurize(const Parameters& params, const ModelConfig& cfg,
                                  std::span<const Example> examples, size_t param_budget) {
    cfg.validate();
    const size_t body = params.body_dim();
    if (body > param_budget) {
        throw std::invalid_argument(
            "exact_featurize: body parameter count exceeds the exact-mode budget");
    }
    StepFeatureMatrix out;
    out.mode = StepFeatureMatrix::Mode::exact;
    out.tau = cfg.loop_horizon;
    out.n_examples = static_cast<uint32_t>(examples.size());
    out.dim = body;
    out.data.assign(static_cast<size_t>(out.n_examples) * out.tau * out.dim, 0.0);
    out.ids.reserve(examples.size());
    for (const Example& ex : examples) out.ids.push_back(ex.id);

    for (uint32_t e = 0; e < examples.size(); ++e) {
        StepTrace trace = forward(params, cfg, examples[e]);
        StepFactors factors = backward_with_hooks(trace, params, cfg, examples[e]);
        const auto per_step = materialize_step_gradients(factors, cfg);
        for (uint32_t t = 0; t < out.tau; ++t) {
            auto row = out.step_row_mut(e, t);
            size_t off = 0;
            for (const auto& [name, g] : per_step[t]) {
                std::memcpy(row.data() + off, g.data.data(), sizeof(double) * g.size());
                off += g.size();
            }
        }
    }
    return out;
}

StepFeatureMatrix featurize_examples(const Parameters& params, const ModelConfig& base_cfg,
                                     std::span<const Example> examples, const SketchPlan& plan,
                                     uint32_t analysis_tau) {
    StepFeatureMatrix out;
    out.mode = StepFeatureMatrix::Mode::sketched;
    out.plan_id = plan.plan_id();
    out.m = plan.sketch_dim();
    out.n_tensors = static_cast<uint32_t>(plan.tensor_count());
    out.tau = analysis_tau;
    out.n_examples = static_cast<uint32_t>(examples.size());
    out.dim = plan.feature_dim();
    out.data.assign(static_cast<size_t>(out.n_examples) * out.tau * out.dim, 0.0);
    out.ids.reserve(examples.size());
    for (const Example& ex : examples) out.ids.push_back(ex.id);

    // group indices by sequence length
    std::vector<std::pair<size_t, std::vector<uint32_t>>> groups;
    for (uint32_t i = 0; i < examples.size(); ++i) {
        const size_t len = examples[i].tokens.size();
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == len; });
        if (it == groups.end()) {
            groups.push_back({len, {i}});
        } else {
            it->second.push_back(i);
        }
    }
    for (const auto& [len, idxs] : groups) {
        ModelConfig cfg = base_cfg;
        cfg.seq_len = static_cast<uint32_t>(len);
        cfg.loop_horizon = analysis_tau;
        std::vector<Example> group;
        group.reserve(idxs.size());
        for (uint32_t i : idxs) group.push_back(examples[i]);
        const StepFeatureMatrix part = featurize_batch(params, cfg, group, plan, nullptr);
        for (size_t g = 0; g < idxs.size(); ++g) {
            std::memcpy(out.data.data() + static_cast<size_t>(idxs[g]) * out.tau * out.dim,
                        part.data.data() + g * out.tau * out.dim,
                        sizeof(double) * out.tau * out.dim);
        }
    }
    return out;
}

std::vector<double> tracin_matrix(const CheckpointFeatures& train, const CheckpointFeatures& test,
                                  std::span<const double> etas) {
    check_compatible(train, test);
    if (etas.size() != train.size()) {
        throw std::invalid_argument("tracin: eta count != checkpoint count");
    }
    const uint32_t n_train = train[0].n_examples, n_test = test[0].n_examples;
    std::vector<double> out(static_cast<size_t>(n_train) * n_test, 0.0);
    for (size_t k = 0; k < train.size(); ++k) {
        std::vector<std::vector<double>> train_totals(n_train), test_totals(n_test);
        for (uint32_t i = 0; i < n_train; ++i) train_totals[i] = train[k].total_row(i);
        for (uint32_t j = 0; j < n_test; ++j) test_totals[j] = test[k].total_row(j);
        for (uint32_t i = 0; i < n_train; ++i) {
            for (uint32_t j = 0; j < n_test; ++j) {
                out[static_cast<size_t>(i) * n_test + j] +=
                    etas[k] * span_dot(train_totals[i], test_totals[j]);
            }
        }
    }
    return out;
}

namespace {

InfluenceTrajectory sdi_pair(const CheckpointFeatures& train, const CheckpointFeatures& test,
                             std::span<const double> etas, uint32_t train_idx, uint32_t test_idx,
                             bool test_side) {
    check_compatible(train, test);
    if (etas.size() != train.size()) {
        throw std::invalid_argument("sdi: eta count != checkpoint count");
    }
    const uint32_t tau = train[0].tau;
    InfluenceTrajectory traj;
    traj.mode = train[0].mode;
    traj.train_id = train[0].ids.empty() ? std::to_string(train_idx) : train[0].ids[train_idx];
    traj.test_id = test[0].ids.empty() ? std::to_string(test_idx) : test[0].ids[test_idx];
    traj.steps.assign(tau, 0.0);
    double tracin = 0.0;
    for (size_t k = 0; k < train.size(); ++k) {
        const auto g_train = train[k].total_row(train_idx);
        const auto g_test = test[k].total_row(test_idx);
        tracin += etas[k] * span_dot(g_train, g_test);
        for (uint32_t t = 0; t < tau; ++t) {
            const auto step_feat =
                test_side ? test[k].step_row(test_idx, t) : train[k].step_row(train_idx, t);
            const auto& total = test_side ? g_train : g_test;
            traj.steps[t] += etas[k] * span_dot(total, step_feat);
        }
    }
    traj.tracin = tracin;

    double sum_steps = 0.0, abs_steps = 0.0;
    for (double v : traj.steps) {
        sum_steps += v;
        abs_steps += std::abs(v);
    }
    const double scale = std::max({std::abs(tracin), abs_steps, 1.0});
    if (std::abs(sum_steps - tracin) > 1e-9 * scale) {
        throw std::logic_error("sdi: conservation identity violated");
    }
    return traj;
}

}  // namespace

InfluenceTrajectory sdi_test_side(const CheckpointFeatures& train, const CheckpointFeatures& test,
                                  std::span<const double> etas, uint32_t train_idx,
                                  uint32_t test_idx) {
    return sdi_pair(train, test, etas, train_idx, test_idx, true);
}

InfluenceTrajectory sdi_train_side(const CheckpointFeatures& train, const CheckpointFeatures& test,
                                   std::span<const double> etas, uint32_t train_idx,
                                   uint32_t test_idx) {
    return sdi_pair(train, test, etas, train_idx, test_idx, false);
}

StepMatrix sdi_matrix(const CheckpointFeatures& train, const CheckpointFeatures& test,
                      std::span<const double> etas, uint32_t train_idx, uint32_t test_idx) {
    check_compatible(train, test);
    const uint32_t tau = train[0].tau;
    StepMatrix out;
    out.tau = tau;
    out.values.assign(static_cast<size_t>(tau) * tau, 0.0);
    for (size_t k = 0; k < train.size(); ++k) {
        for (uint32_t s = 0; s < tau; ++s) {
            const auto phi_s = train[k].step_row(train_idx, s);
            for (uint32_t t = 0; t < tau; ++t) {
                out.values[static_cast<size_t>(s) * tau + t] +=
                    etas[k] * span_dot(phi_s, test[k].step_row(test_idx, t));
            }
        }
    }
    return out;
}

std::vector<double> StepMatrix::row_sums() const {
    std::vector<double> out(tau, 0.0);
    for (uint32_t s = 0; s < tau; ++s) {
        for (uint32_t t = 0; t < tau; ++t) out[s] += at(s, t);
    }
    return out;
}

std::vector<double> StepMatrix::col_sums() const {
    std::vector<double> out(tau, 0.0);
    for (uint32_t s = 0; s < tau; ++s) {
        for (uint32_t t = 0; t < tau; ++t) out[t] += at(s, t);
    }
    return out;
}

double StepMatrix::total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

std::vector<double> sdi_tensor(const CheckpointFeatures& train, const CheckpointFeatures& test,
                               std::span<const double> etas) {
    check_compatible(train, test);
    const uint32_t n_train = train[0].n_examples, n_test = test[0].n_examples;
    const uint32_t tau = train[0].tau;
    std::vector<double> out(static_cast<size_t>(n_train) * n_test * tau, 0.0);
    for (size_t k = 0; k < train.size(); ++k) {
        std::vector<std::vector<double>> train_totals(n_train);
        for (uint32_t i = 0; i < n_train; ++i) train_totals[i] = train[k].total_row(i);
        for (uint32_t i = 0; i < n_train; ++i) {
            for (uint32_t j = 0; j < n_test; ++j) {
                double* dst = out.data() + (static_cast<size_t>(i) * n_test + j) * tau;
                for (uint32_t t = 0; t < tau; ++t) {
                    dst[t] += etas[k] * span_dot(train_totals[i], test[k].step_row(j, t));
                }
            }
        }
    }
    return out;
}

FidelityReport fidelity_report(std::span<const double> exact_sdi,
                               std::span<const double> sketched_sdi, uint32_t n_train,
                               uint32_t n_test, uint32_t tau) {
    const size_t n = static_cast<size_t>(n_train) * n_test * tau;
    if (exact_sdi.size() != n || sketched_sdi.size() != n) {
        throw std::invalid_argument("fidelity: tensor sizes do not match the pair grid");
    }
    double num_sdi = 0.0, den_sdi = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = sketched_sdi[i] - exact_sdi[i];
        num_sdi += d * d;
        den_sdi += exact_sdi[i] * exact_sdi[i];
    }
    double num_tr = 0.0, den_tr = 0.0;
    for (uint32_t i = 0; i < n_train; ++i) {
        for (uint32_t j = 0; j < n_test; ++j) {
            const double* ex = exact_sdi.data() + (static_cast<size_t>(i) * n_test + j) * tau;
            const double* sk = sketched_sdi.data() + (static_cast<size_t>(i) * n_test + j) * tau;
            double te = 0.0, ts = 0.0;
            for (uint32_t t = 0; t < tau; ++t) {
                te += ex[t];
                ts += sk[t];
            }
            num_tr += (ts - te) * (ts - te);
            den_tr += te * te;
        }
    }
    FidelityReport r;
    r.rel_frobenius_sdi = den_sdi > 0.0 ? std::sqrt(num_sdi / den_sdi) : 0.0;
    r.rel_frobenius_tracin = den_tr > 0.0 ? std::sqrt(num_tr / den_tr) : 0.0;
    return r;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("feature cache: truncated file");
    return v;
}

}  // namespace

void write_feature_cache(const std::string& path, const StepFeatureMatrix& features) {
    if (features.mode != StepFeatureMatrix::Mode::sketched) {
        throw std::invalid_argument("feature cache: only sketched features are cached");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("feature cache: cannot open " + path);
    os.write("SDIF", 4);
    write_pod<uint32_t>(os, features.m);
    write_pod<uint32_t>(os, features.tau);
    write_pod<uint32_t>(os, features.n_tensors);
    write_pod<uint32_t>(os, features.n_examples);
    os.write(reinterpret_cast<const char*>(features.data.data()),
             static_cast<std::streamsize>(features.data.size() * sizeof(double)));
    if (!os) throw std::runtime_error("feature cache: write failed for " + path);
}

StepFeatureMatrix read_feature_cache(const std::string& path, uint64_t expected_plan_id) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("feature cache: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SDIF", 4) != 0) {
        throw std::runtime_error("feature cache: bad magic in " + path);
    }
    StepFeatureMatrix out;
    out.mode = StepFeatureMatrix::Mode::sketched;
    out.plan_id = expected_plan_id;
    out.m = read_pod<uint32_t>(is);
    out.tau = read_pod<uint32_t>(is);
    out.n_tensors = read_pod<uint32_t>(is);
    out.n_examples = read_pod<uint32_t>(is);
    out.dim = static_cast<size_t>(out.m) * out.n_tensors;
    out.data.resize(static_cast<size_t>(out.n_examples) * out.tau * out.dim);
    is.read(reinterpret_cast<char*>(out.data.data()),
            static_cast<std::streamsize>(out.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("feature cache: truncated data in " + path);
    return out;
}

void write_influence_json(const std::string& path,
                          std::span<const InfluenceTrajectory> trajectories) {
    nlohmann::json j;
    j["schema_version"] = 1;
    auto& pairs = j["pairs"] = nlohmann::json::array();
    for (const auto& t : trajectories) {
        pairs.push_back({{"train_id", t.train_id},
                         {"test_id", t.test_id},
                         {"tracin", t.tracin},
                         {"mode", t.mode == StepFeatureMatrix::Mode::exact ? "exact" : "sketched"},
                         {"steps", t.steps}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("influence report: cannot open " + path);
    os << j.dump(2) << "\n";
}

void write_influence_csv(const std::string& path,
                         std::span<const InfluenceTrajectory> trajectories) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("influence report: cannot open " + path);
    const uint32_t tau = trajectories.empty() ? 0 : static_cast<uint32_t>(trajectories[0].steps.size());
    os << "train_id,test_id,tracin";
    for (uint32_t t = 1; t <= tau; ++t) os << ",step_" << t;
    os << "\n";
    os.precision(17);
    for (const auto& tr : trajectories) {
        os << tr.train_id << "," << tr.test_id << "," << tr.tracin;
        for (double v : tr.steps) os << "," << v;
        os << "\n";
    }
}

}  // namespace sdikit
