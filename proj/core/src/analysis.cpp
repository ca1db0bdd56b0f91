#include "sdikit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sdikit/random.hpp"

namespace sdikit {

namespace {

constexpr double kPcaTol = 1e-10;
constexpr uint32_t kPcaMaxIter = 10000;

double vec_dot(const double* a, const double* b, size_t d) {
    double s = 0.0;
    for (size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
}

double vec_norm(const double* a, size_t d) { return std::sqrt(vec_dot(a, a, d)); }

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

PcaResult power_iteration_pca(const std::vector<double>& rows, size_t n, size_t d,
                              uint32_t n_components) {
    if (rows.size() != n * d) throw std::invalid_argument("pca: row buffer size mismatch");
    PcaResult out;
    out.mean.assign(d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t c = 0; c < d; ++c) out.mean[c] += rows[i * d + c];
    }
    for (auto& m : out.mean) m /= static_cast<double>(n);

    // covariance (biased, 1/n)
    std::vector<double> cov(d * d, 0.0);
    std::vector<double> centered(rows.size());
    for (size_t i = 0; i < n; ++i) {
        for (size_t c = 0; c < d; ++c) centered[i * d + c] = rows[i * d + c] - out.mean[c];
    }
    for (size_t i = 0; i < n; ++i) {
        const double* xi = centered.data() + i * d;
        for (size_t a = 0; a < d; ++a) {
            const double va = xi[a];
            if (va == 0.0) continue;
            double* crow = cov.data() + a * d;
            for (size_t b = 0; b < d; ++b) crow[b] += va * xi[b];
        }
    }
    for (auto& c : cov) c /= static_cast<double>(n);

    std::vector<double> work(d), next(d);
    for (uint32_t comp = 0; comp < n_components; ++comp) {
        // deterministic start, one-hot rotated per component
        std::fill(work.begin(), work.end(), 0.0);
        work[comp % d] = 1.0;
        double lambda = 0.0;
        for (uint32_t it = 0; it < kPcaMaxIter; ++it) {
            for (size_t a = 0; a < d; ++a) next[a] = vec_dot(cov.data() + a * d, work.data(), d);
            const double nrm = vec_norm(next.data(), d);
            if (nrm < 1e-300) {
                // covariance annihilated the iterate: no variance left
                std::fill(next.begin(), next.end(), 0.0);
                lambda = 0.0;
                break;
            }
            for (auto& v : next) v /= nrm;
            const double new_lambda = nrm;
            std::swap(work, next);
            if (std::abs(new_lambda - lambda) <= kPcaTol * std::max(1.0, std::abs(new_lambda))) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        // sign convention: largest-magnitude entry positive
        size_t arg = 0;
        for (size_t c = 1; c < d; ++c) {
            if (std::abs(work[c]) > std::abs(work[arg])) arg = c;
        }
        if (work[arg] < 0.0) {
            for (auto& v : work) v = -v;
        }
        if (lambda == 0.0) std::fill(work.begin(), work.end(), 0.0);
        out.components.insert(out.components.end(), work.begin(), work.end());
        out.eigenvalues.push_back(lambda);
        // deflate: cov -= lambda v v^T
        if (lambda > 0.0) {
            for (size_t a = 0; a < d; ++a) {
                for (size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * work[a] * work[b];
            }
        }
    }

    out.coords.assign(n * n_components, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (uint32_t comp = 0; comp < n_components; ++comp) {
            out.coords[i * n_components + comp] =
                vec_dot(centered.data() + i * d, out.components.data() + comp * d, d);
        }
    }
    return out;
}

namespace {

double sq_dist(const double* a, const double* b, size_t d) {
    double s = 0.0;
    for (size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

KMeansResult kmeans_once(const std::vector<double>& pts, size_t n, size_t d, uint32_t k,
                         std::mt19937_64& rng) {
    KMeansResult res;
    res.k = k;
    res.centroids.assign(static_cast<size_t>(k) * d, 0.0);

    // k-means++ seeding
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    const size_t first = uniform_below(rng, n);
    std::copy(pts.begin() + first * d, pts.begin() + (first + 1) * d, res.centroids.begin());
    for (uint32_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double d2 = sq_dist(pts.data() + i * d, res.centroids.data() + (c - 1) * d, d);
            dist2[i] = std::min(dist2[i], d2);
            total += dist2[i];
        }
        size_t choice = 0;
        if (total > 0.0) {
            double r = uniform_unit(rng) * total;
            for (size_t i = 0; i < n; ++i) {
                r -= dist2[i];
                if (r <= 0.0) {
                    choice = i;
                    break;
                }
                choice = i;
            }
        } else {
            choice = uniform_below(rng, n);
        }
        std::copy(pts.begin() + choice * d, pts.begin() + (choice + 1) * d,
                  res.centroids.begin() + static_cast<size_t>(c) * d);
    }

    res.labels.assign(n, 0);
    std::vector<double> sums(static_cast<size_t>(k) * d);
    std::vector<size_t> counts(k);
    for (uint32_t iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            uint32_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (uint32_t c = 0; c < k; ++c) {
                const double d2 = sq_dist(pts.data() + i * d, res.centroids.data() + c * d, d);
                if (d2 < bd) {
                    bd = d2;
                    best = c;
                }
            }
            if (res.labels[i] != best) {
                res.labels[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (size_t i = 0; i < n; ++i) {
            counts[res.labels[i]] += 1;
            double* s = sums.data() + static_cast<size_t>(res.labels[i]) * d;
            const double* p = pts.data() + i * d;
            for (size_t c = 0; c < d; ++c) s[c] += p[c];
        }
        for (uint32_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // re-seed an empty cluster at the farthest point
                size_t far = 0;
                double fd = -1.0;
                for (size_t i = 0; i < n; ++i) {
                    const double d2 = sq_dist(pts.data() + i * d,
                                              res.centroids.data() + static_cast<size_t>(res.labels[i]) * d, d);
                    if (d2 > fd) {
                        fd = d2;
                        far = i;
                    }
                }
                std::copy(pts.begin() + far * d, pts.begin() + (far + 1) * d,
                          res.centroids.begin() + static_cast<size_t>(c) * d);
            } else {
                double* ctr = res.centroids.data() + static_cast<size_t>(c) * d;
                const double* s = sums.data() + static_cast<size_t>(c) * d;
                for (size_t cc = 0; cc < d; ++cc) ctr[cc] = s[cc] / static_cast<double>(counts[c]);
            }
        }
    }

    res.inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
        res.inertia += sq_dist(pts.data() + i * d,
                               res.centroids.data() + static_cast<size_t>(res.labels[i]) * d, d);
    }
    return res;
}

}  // namespace

KMeansResult kmeans(const std::vector<double>& points, size_t n, size_t d, uint32_t k,
                    uint32_t restarts, uint64_t seed) {
    if (n == 0 || k == 0 || points.size() != n * d) {
        throw std::invalid_argument("kmeans: bad inputs");
    }
    if (k > n) throw std::invalid_argument("kmeans: k exceeds the number of points");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (uint32_t r = 0; r < std::max(1u, restarts); ++r) {
        std::mt19937_64 rng(subseed(seed, r));
        KMeansResult cand = kmeans_once(points, n, d, k, rng);
        if (cand.inertia < best.inertia) best = std::move(cand);
    }
    return best;
}

namespace {

// answer-token hidden state per loop step for one parity example
std::vector<double> probe_states(const Parameters& params, const ModelConfig& base,
                                 const ParityExample& probe, uint32_t* d_out, uint32_t* tau_out) {
    const ModelConfig cfg = parity_config(base, probe.n());
    const StepTrace trace = forward(params, cfg, probe.to_model_example());
    const uint32_t d = cfg.d_model;
    const uint32_t tau = cfg.loop_horizon;
    const uint32_t pos = probe.n();
    std::vector<double> states(static_cast<size_t>(tau) * d);
    for (uint32_t t = 0; t < tau; ++t) {
        const double* h = trace.steps[t].h.data() + static_cast<size_t>(pos) * d;
        std::copy(h, h + d, states.begin() + static_cast<size_t>(t) * d);
    }
    *d_out = d;
    *tau_out = tau;
    return states;
}

// answer-token hidden state at the readout step only
std::vector<double> readout_state(const Parameters& params, const ModelConfig& base,
                                  const ParityExample& ex) {
    const ModelConfig cfg = parity_config(base, ex.n());
    const StepTrace trace = forward(params, cfg, ex.to_model_example());
    const uint32_t d = cfg.d_model;
    const double* h =
        trace.steps[ex.readout_step() - 1].h.data() + static_cast<size_t>(ex.n()) * d;
    return std::vector<double>(h, h + d);
}

}  // namespace

CycleReport analyze_cycle(const Parameters& params, const ModelConfig& base,
                          const ParityExample& probe, const CycleOptions& opts) {
    CycleReport report;
    uint32_t d = 0, tau = 0;
    const std::vector<double> states = probe_states(params, base, probe, &d, &tau);
    report.tau = tau;

    // lag-cosine table, p = 1..8
    const uint32_t max_lag = std::min<uint32_t>(8, tau > 1 ? tau - 1 : 0);
    for (uint32_t p = 1; p <= max_lag; ++p) {
        double acc = 0.0;
        uint32_t cnt = 0;
        for (uint32_t t = 0; t + p < tau; ++t) {
            const double* a = states.data() + static_cast<size_t>(t) * d;
            const double* b = states.data() + static_cast<size_t>(t + p) * d;
            const double na = vec_norm(a, d), nb = vec_norm(b, d);
            acc += (na > 0.0 && nb > 0.0) ? vec_dot(a, b, d) / (na * nb) : 0.0;
            ++cnt;
        }
        report.cosine_lag_table.push_back(cnt ? acc / cnt : 0.0);
    }

    const PcaResult pca = power_iteration_pca(states, tau, d, 2);
    report.pca_coords = pca.coords;

    // distinct states cap k
    uint32_t distinct = 0;
    {
        std::vector<uint32_t> reps;  // step indices of representatives
        for (uint32_t t = 0; t < tau; ++t) {
            bool found = false;
            for (uint32_t r : reps) {
                if (sq_dist(states.data() + static_cast<size_t>(t) * d,
                            states.data() + static_cast<size_t>(r) * d, d) < 1e-24) {
                    found = true;
                    break;
                }
            }
            if (!found) reps.push_back(t);
        }
        distinct = static_cast<uint32_t>(reps.size());
    }
    uint32_t k = opts.k;
    if (distinct < k) {
        report.degenerate = true;
        report.warning = "fewer distinct states than requested clusters; k reduced to " +
                         std::to_string(distinct);
        k = std::max<uint32_t>(1, distinct);
    }
    report.k = k;

    const KMeansResult km = kmeans(states, tau, d, k, opts.restarts, subseed(opts.seed, 0x6b1));
    report.state_sequence = km.labels;

    // empirical transition matrix; unvisited rows self-loop
    report.transition_matrix.assign(static_cast<size_t>(k) * k, 0.0);
    std::vector<double> row_counts(k, 0.0);
    for (uint32_t t = 0; t + 1 < tau; ++t) {
        report.transition_matrix[static_cast<size_t>(km.labels[t]) * k + km.labels[t + 1]] += 1.0;
        row_counts[km.labels[t]] += 1.0;
    }
    for (uint32_t s = 0; s < k; ++s) {
        if (row_counts[s] == 0.0) {
            report.transition_matrix[static_cast<size_t>(s) * k + s] = 1.0;
        } else {
            for (uint32_t t = 0; t < k; ++t) {
                report.transition_matrix[static_cast<size_t>(s) * k + t] /= row_counts[s];
            }
        }
    }

    // state -> parity lookup proxy fitted on alternating inputs
    std::mt19937_64 cal_rng(subseed(opts.seed, 0xca1));
    auto sample_alternating = [&](std::mt19937_64& rng) {
        const uint32_t len =
            2 + static_cast<uint32_t>(uniform_below(rng, std::max(1u, opts.max_probe_length - 1)));
        const uint8_t first = static_cast<uint8_t>(rng() & 1ULL);
        return alternating_probe(len, first);
    };
    std::vector<std::vector<double>> votes(k, std::vector<double>(2, 0.0));
    std::vector<double> cal_dists;
    for (uint32_t i = 0; i < opts.calibration_count; ++i) {
        const ParityExample ex = sample_alternating(cal_rng);
        const std::vector<double> h = readout_state(params, base, ex);
        uint32_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (uint32_t c = 0; c < k; ++c) {
            const double d2 = sq_dist(h.data(), km.centroids.data() + static_cast<size_t>(c) * d, d);
            if (d2 < bd) {
                bd = d2;
                best = c;
            }
        }
        votes[best][ex.label] += 1.0;
        cal_dists.push_back(std::sqrt(bd));
    }
    std::vector<uint8_t> lookup(k, 0);
    for (uint32_t c = 0; c < k; ++c) lookup[c] = votes[c][1] > votes[c][0] ? 1 : 0;
    const double threshold = quantile(cal_dists, opts.selective_percentile / 100.0);

    std::mt19937_64 eval_rng(subseed(opts.seed, 0xe7a1));
    size_t correct = 0, covered = 0, covered_correct = 0;
    for (uint32_t i = 0; i < opts.eval_count; ++i) {
        const ParityExample ex = sample_alternating(eval_rng);
        const std::vector<double> h = readout_state(params, base, ex);
        uint32_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (uint32_t c = 0; c < k; ++c) {
            const double d2 = sq_dist(h.data(), km.centroids.data() + static_cast<size_t>(c) * d, d);
            if (d2 < bd) {
                bd = d2;
                best = c;
            }
        }
        const bool ok = lookup[best] == ex.label;
        correct += ok ? 1 : 0;
        if (std::sqrt(bd) <= threshold) {
            covered += 1;
            covered_correct += ok ? 1 : 0;
        }
    }
    report.proxy_accuracy = opts.eval_count ? static_cast<double>(correct) / opts.eval_count : 0.0;
    report.selective_coverage =
        opts.eval_count ? static_cast<double>(covered) / opts.eval_count : 0.0;
    report.selective_proxy_accuracy =
        covered ? static_cast<double>(covered_correct) / covered : 0.0;
    return report;
}

std::string CycleReport::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["tau"] = tau;
    j["k"] = k;
    j["cosine_lag_table"] = cosine_lag_table;
    auto& coords = j["pca_coords"] = nlohmann::json::array();
    for (uint32_t t = 0; t < tau; ++t) {
        coords.push_back({pca_coords[static_cast<size_t>(t) * 2], pca_coords[static_cast<size_t>(t) * 2 + 1]});
    }
    j["state_sequence"] = state_sequence;
    auto& tm = j["transition_matrix"] = nlohmann::json::array();
    for (uint32_t s = 0; s < k; ++s) {
        std::vector<double> row(transition_matrix.begin() + static_cast<size_t>(s) * k,
                                transition_matrix.begin() + static_cast<size_t>(s + 1) * k);
        tm.push_back(row);
    }
    j["proxy_accuracy"] = proxy_accuracy;
    j["selective_proxy_accuracy"] = selective_proxy_accuracy;
    j["selective_coverage"] = selective_coverage;
    j["degenerate"] = degenerate;
    j["warning"] = warning;
    return j.dump(2);
}

std::vector<EnergyRow> sdi_energy(std::span<const InfluenceTrajectory> trajectories,
                                  const std::map<std::string, double>* difficulty) {
    // preserve first-seen test order
    std::vector<EnergyRow> rows;
    auto find_row = [&](const std::string& id) -> EnergyRow* {
        for (auto& r : rows) {
            if (r.test_id == id) return &r;
        }
        return nullptr;
    };
    for (const auto& t : trajectories) {
        EnergyRow* row = find_row(t.test_id);
        if (row == nullptr) {
            rows.push_back(EnergyRow{t.test_id, std::vector<double>(t.steps.size(), 0.0), 0.0, {}});
            row = &rows.back();
            if (difficulty != nullptr) {
                auto it = difficulty->find(t.test_id);
                if (it != difficulty->end()) row->difficulty = it->second;
            }
        }
        if (row->energy.size() != t.steps.size()) {
            throw std::invalid_argument("sdi_energy: trajectories disagree on tau");
        }
        for (size_t i = 0; i < t.steps.size(); ++i) row->energy[i] += std::abs(t.steps[i]);
    }
    for (auto& r : rows) {
        const size_t tau = r.energy.size();
        double total = 0.0;
        for (double e : r.energy) total += e;
        const size_t late_start = tau / 2 + 1;  // ceil(tau/2)+1 as 1-based step
        double late = 0.0;
        for (size_t t = late_start; t <= tau; ++t) late += r.energy[t - 1];
        r.late_mass = total > 0.0 ? late / total : 0.0;
    }
    return rows;
}

std::vector<EnergyBinSummary> aggregate_energy(const std::vector<EnergyRow>& rows, uint32_t bins) {
    std::vector<EnergyBinSummary> out;
    if (rows.empty()) return out;
    const size_t tau = rows[0].energy.size();

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    bool any_diff = false;
    for (const auto& r : rows) {
        if (r.difficulty) {
            any_diff = true;
            lo = std::min(lo, *r.difficulty);
            hi = std::max(hi, *r.difficulty);
        }
    }
    if (!any_diff || bins == 0) bins = 1;

    auto bin_of = [&](const EnergyRow& r) -> uint32_t {
        if (!any_diff || !r.difficulty || hi <= lo) return 0;
        const double f = (*r.difficulty - lo) / (hi - lo);
        return std::min<uint32_t>(bins - 1, static_cast<uint32_t>(f * bins));
    };

    for (uint32_t b = 0; b < bins; ++b) {
        EnergyBinSummary s;
        s.bin = b;
        if (any_diff && hi > lo) {
            s.lo = lo + (hi - lo) * b / bins;
            s.hi = lo + (hi - lo) * (b + 1) / bins;
        }
        std::vector<const EnergyRow*> members;
        for (const auto& r : rows) {
            if (bin_of(r) == b) members.push_back(&r);
        }
        s.count = members.size();
        if (members.empty()) {
            out.push_back(std::move(s));
            continue;
        }
        s.median.resize(tau);
        s.q25.resize(tau);
        s.q75.resize(tau);
        for (size_t t = 0; t < tau; ++t) {
            std::vector<double> vals;
            vals.reserve(members.size());
            for (const auto* r : members) vals.push_back(r->energy[t]);
            s.median[t] = quantile(vals, 0.5);
            s.q25[t] = quantile(vals, 0.25);
            s.q75[t] = quantile(vals, 0.75);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace sdikit
