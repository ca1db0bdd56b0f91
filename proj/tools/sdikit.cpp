// sdikit: verification suites, fidelity benchmarks, parity training, SDI
// computation, and trajectory analysis for the looped-transformer
// influence toolkit. Every command is deterministic under --seed and
// writes machine-readable reports (JSON/CSV) with a schema version.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sdikit/analysis.hpp"
#include "sdikit/checkpoint.hpp"
#include "sdikit/engine.hpp"
#include "sdikit/model.hpp"
#include "sdikit/parallel.hpp"
#include "sdikit/parity.hpp"
#include "sdikit/sketch.hpp"
#include "sdikit/variance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdikit;

namespace {

struct Presets {
    ModelConfig base;
    std::vector<CurriculumPhase> phases;
    uint32_t batch_size = 0;
    double lr = 0.0;
    uint32_t checkpoint_every = 0;
    uint32_t ood_length = 0;
    uint32_t probe_length = 0;
};

// "micro" trains on a laptop-scale CPU budget; "full" mirrors the larger
// documented setting and carries no acceptance guarantees.
Presets preset(const std::string& name, uint64_t seed) {
    Presets p;
    p.base.vocab_size = parity_tokens::kVocab;
    p.base.injection = Injection::additive;
    p.base.nonlinearity = Nonlinearity::relu;
    p.base.causal = true;
    p.base.seed = seed;
    if (name == "micro") {
        p.base.d_model = 64;
        p.base.n_heads = 4;
        p.phases = {{400, 4}, {700, 8}, {1100, 12}};
        p.batch_size = 32;
        p.lr = 0.15;
        p.checkpoint_every = 550;
        p.ood_length = 20;
        p.probe_length = 12;
    } else if (name == "full") {
        p.base.d_model = 256;
        p.base.n_heads = 64;
        p.phases = {{2000, 6}, {3000, 12}, {5000, 21}};
        p.batch_size = 32;
        p.lr = 0.1;
        p.checkpoint_every = 2000;
        p.ood_length = 40;
        p.probe_length = 40;
    } else {
        throw CLI::ValidationError("--preset must be micro or full");
    }
    return p;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << text;
    if (text.empty() || text.back() != '\n') os << "\n";
}

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// verify-sketch

struct SuiteResult {
    json report = json::array();
    int failures = 0;

    void add(const std::string& name, bool ok, json detail) {
        detail["check"] = name;
        detail["pass"] = ok;
        report.push_back(detail);
        if (!ok) ++failures;
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    }
};

int cmd_verify_sketch(uint64_t seed, std::vector<uint32_t> m_list, uint64_t trials,
                      const std::string& out) {
    if (m_list.empty()) m_list = {16, 64};
    SuiteResult suite;
    std::mt19937_64 rng(seed);
    GaussianDraw gauss(rng);

    for (uint32_t m : m_list) {
        // CountSketch unbiasedness + variance vs the exact closed form
        std::vector<double> x(48), y(48);
        for (auto& v : x) v = gauss();
        for (auto& v : y) v = gauss();
        double truth = 0.0;
        for (size_t i = 0; i < x.size(); ++i) truth += x[i] * y[i];
        const McStats cs = mc_cs_dot(x, y, m, trials, subseed(seed, m));
        const double cs_exact = exact_cs_variance(x, y, m);
        const double cs_bound = cs_variance_bound(x, y, m);
        suite.add("cs_unbiased_m" + std::to_string(m),
                  std::abs(cs.mean - truth) <= 4.0 * cs.se_mean,
                  {{"m", m},
                   {"mc_mean", cs.mean},
                   {"truth", truth},
                   {"se", cs.se_mean},
                   {"trials", cs.trials}});
        suite.add("cs_variance_exact_m" + std::to_string(m),
                  std::abs(cs.variance - cs_exact) <= 5.0 * cs.se_variance,
                  {{"m", m}, {"mc_variance", cs.variance}, {"exact", cs_exact}});
        suite.add("cs_variance_bound_m" + std::to_string(m),
                  cs.variance <= cs_bound + 5.0 * cs.se_variance,
                  {{"m", m}, {"mc_variance", cs.variance}, {"bound", cs_bound}});

        // TensorSketch exact variance vs Monte-Carlo
        Tensor X = Tensor::matrix(6, 5), Y = Tensor::matrix(6, 5);
        for (auto& v : X.data) v = gauss();
        for (auto& v : Y.data) v = gauss();
        VarianceReport r = exact_ts_variance(X, Y, m);
        attach_ts_monte_carlo(r, X, Y, m, trials, subseed(seed, 1000 + m));
        suite.add("ts_unbiased_m" + std::to_string(m),
                  std::abs(r.mc_mean - r.expected_dot) <= 4.0 * r.mc_se_mean,
                  {{"m", m}, {"mc_mean", r.mc_mean}, {"truth", r.expected_dot}});
        suite.add("ts_variance_exact_m" + std::to_string(m),
                  std::abs(r.mc_variance - r.exact_variance) <= 5.0 * r.mc_se_variance,
                  {{"m", m},
                   {"mc_variance", r.mc_variance},
                   {"exact", r.exact_variance},
                   {"bound", r.bound}});
        suite.add("ts_variance_bound_m" + std::to_string(m),
                  r.mc_variance <= r.bound + 5.0 * r.mc_se_variance,
                  {{"m", m}, {"mc_variance", r.mc_variance}, {"bound", r.bound}});
    }

    // global sketch unbiasedness over plan seeds on a 2-tensor toy model
    {
        std::vector<TensorSpec> specs{{"vec", SketchKind::vector_count_sketch, 24, 0},
                                      {"mat", SketchKind::matrix_tensor_sketch, 6, 8}};
        TensorMap g, p;
        Tensor gv = Tensor::vector(24), pv = Tensor::vector(24);
        Tensor gm = Tensor::matrix(6, 8), pm = Tensor::matrix(6, 8);
        for (auto& v : gv.data) v = gauss();
        for (auto& v : pv.data) v = gauss();
        for (auto& v : gm.data) v = gauss();
        for (auto& v : pm.data) v = gauss();
        double truth = 0.0;
        for (size_t i = 0; i < gv.size(); ++i) truth += gv[i] * pv[i];
        for (size_t i = 0; i < gm.size(); ++i) truth += gm[i] * pm[i];
        g.emplace_back("vec", gv);
        g.emplace_back("mat", gm);
        p.emplace_back("vec", pv);
        p.emplace_back("mat", pm);

        const uint64_t plan_trials = std::max<uint64_t>(1000, trials / 20);
        std::vector<double> vals(plan_trials);
        parallel_for(plan_trials, [&](size_t t) {
            const auto plan = SketchPlan::make(subseed(seed, 90000 + t), 32, specs);
            vals[t] = dot(global_sketch(g, plan), global_sketch(p, plan));
        });
        const McStats s = summarize_trials(vals);
        suite.add("global_sketch_unbiased",
                  std::abs(s.mean - truth) <= 4.0 * s.se_mean,
                  {{"mc_mean", s.mean}, {"truth", truth}, {"trials", plan_trials}});
    }

    // tightness witness and factor comparison
    suite.add("witness_99pct",
              tightness_gap(1024, 1024, 2048) <= 0.01 * ts_bound_factor(2048),
              {{"gap", tightness_gap(1024, 1024, 2048)}, {"bound", ts_bound_factor(2048)}});

    json out_doc;
    out_doc["schema_version"] = 1;
    out_doc["command"] = "verify-sketch";
    out_doc["seed"] = seed;
    out_doc["trials"] = trials;
    out_doc["checks"] = suite.report;
    out_doc["failures"] = suite.failures;
    if (!out.empty()) write_text(out, out_doc.dump(2));
    std::cout << (suite.failures == 0 ? "OK" : "FAILED") << " (" << suite.report.size()
              << " checks, " << suite.failures << " failures)\n";
    return suite.failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench-fidelity

int cmd_bench_fidelity(uint64_t seed, std::vector<uint32_t> m_list, uint32_t n_seeds,
                       const std::string& preset_name, const std::string& out) {
    if (m_list.empty()) m_list = {256, 512, 1024, 2048, 4096};
    std::sort(m_list.begin(), m_list.end());

    // fidelity testbed: a small model with materializable gradients
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.d_model = preset_name == "full" ? 32 : 16;
    cfg.n_heads = 4;
    cfg.seq_len = 12;
    cfg.loop_horizon = 8;
    cfg.injection = Injection::additive;
    cfg.nonlinearity = Nonlinearity::relu;
    cfg.seed = seed;

    const Parameters params = Parameters::init(cfg);
    Parameters later = params;
    {
        // a second checkpoint, one sgd step away
        std::mt19937_64 rng(subseed(seed, 1));
        Example ex;
        ex.tokens.resize(cfg.seq_len);
        ex.targets.resize(cfg.seq_len);
        ex.loss_mask.assign(cfg.seq_len, 1);
        for (auto& t : ex.tokens) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
        for (auto& t : ex.targets) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
        Parameters g = Parameters::zeros_like(cfg);
        const StepTrace tr = forward(later, cfg, ex);
        backward_pass(tr, later, cfg, ex, nullptr, &g);
        auto pt = later.all_tensors();
        auto gt = g.all_tensors();
        for (size_t i = 0; i < pt.size(); ++i) {
            for (size_t c = 0; c < pt[i].second->size(); ++c) {
                pt[i].second->data[c] -= 0.05 * gt[i].second->data[c];
            }
        }
    }
    const std::vector<Parameters> ck_params{params, later};
    const std::vector<double> etas{0.05, 0.05};

    auto make_examples = [&](uint64_t s, size_t count, const char* tag) {
        std::vector<Example> out_ex;
        std::mt19937_64 rng(subseed(seed, s));
        for (size_t i = 0; i < count; ++i) {
            Example ex;
            ex.tokens.resize(cfg.seq_len);
            ex.targets.resize(cfg.seq_len);
            ex.loss_mask.assign(cfg.seq_len, 0);
            for (auto& t : ex.tokens) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
            for (auto& t : ex.targets) t = static_cast<uint32_t>(uniform_below(rng, cfg.vocab_size));
            for (auto& m : ex.loss_mask) m = static_cast<uint8_t>(rng() & 1ULL);
            ex.loss_mask[0] = 1;
            ex.id = std::string(tag) + "_" + std::to_string(i);
            out_ex.push_back(std::move(ex));
        }
        return out_ex;
    };
    const auto train_ex = make_examples(100, 8, "train");
    const auto test_ex = make_examples(200, 4, "test");

    CheckpointFeatures exact_train, exact_test;
    for (const auto& p : ck_params) {
        exact_train.push_back(exact_featurize(p, cfg, train_ex));
        exact_test.push_back(exact_featurize(p, cfg, test_ex));
    }
    const auto exact_sdi = sdi_tensor(exact_train, exact_test, etas);

    struct RowStat {
        uint32_t m;
        double mean_sdi, sd_sdi, mean_tracin, sd_tracin;
    };
    std::vector<RowStat> rows;
    for (uint32_t m : m_list) {
        std::vector<double> errs_sdi(n_seeds), errs_tracin(n_seeds);
        for (uint32_t s = 0; s < n_seeds; ++s) {
            const auto plan = SketchPlan::make(subseed(seed, 7000 + m * 101 + s), m,
                                               body_tensor_specs(cfg));
            CheckpointFeatures sk_train, sk_test;
            for (const auto& p : ck_params) {
                sk_train.push_back(featurize_batch(p, cfg, train_ex, plan, nullptr));
                sk_test.push_back(featurize_batch(p, cfg, test_ex, plan, nullptr));
            }
            const auto sk_sdi = sdi_tensor(sk_train, sk_test, etas);
            const FidelityReport r = fidelity_report(
                exact_sdi, sk_sdi, static_cast<uint32_t>(train_ex.size()),
                static_cast<uint32_t>(test_ex.size()), cfg.loop_horizon);
            errs_sdi[s] = r.rel_frobenius_sdi;
            errs_tracin[s] = r.rel_frobenius_tracin;
        }
        auto mean_sd = [](const std::vector<double>& v) {
            double m0 = 0.0;
            for (double x : v) m0 += x;
            m0 /= v.size();
            double var = 0.0;
            for (double x : v) var += (x - m0) * (x - m0);
            var = v.size() > 1 ? var / (v.size() - 1) : 0.0;
            return std::pair<double, double>(m0, std::sqrt(var));
        };
        const auto [ms, ss] = mean_sd(errs_sdi);
        const auto [mt, st] = mean_sd(errs_tracin);
        rows.push_back({m, ms, ss, mt, st});
        std::cout << "m=" << m << " sdi_err=" << ms << " (+-" << ss << ") tracin_err=" << mt
                  << " (+-" << st << ")\n";
    }

    // least squares log-log slope of mean sdi error vs m
    double slope = 0.0;
    bool have_slope = rows.size() >= 2;
    if (have_slope) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(rows.size());
        for (const auto& r : rows) {
            const double lx = std::log(static_cast<double>(r.m));
            const double ly = std::log(r.mean_sdi);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        std::cout << "log-log slope: " << slope << "\n";
    }

    std::ostringstream csv;
    csv << "m,mean_err_sdi,sd_err_sdi,mean_err_tracin,sd_err_tracin,slope\n";
    csv.precision(12);
    for (const auto& r : rows) {
        csv << r.m << "," << r.mean_sdi << "," << r.sd_sdi << "," << r.mean_tracin << ","
            << r.sd_tracin << ",";
        if (have_slope) csv << slope;
        csv << "\n";
    }
    if (!out.empty()) {
        write_text(out, csv.str());
        json j;
        j["schema_version"] = 1;
        j["command"] = "bench-fidelity";
        j["seed"] = seed;
        j["seeds_per_m"] = n_seeds;
        if (have_slope) j["slope"] = slope;
        auto& jr = j["rows"] = json::array();
        for (const auto& r : rows) {
            jr.push_back({{"m", r.m},
                          {"mean_err_sdi", r.mean_sdi},
                          {"sd_err_sdi", r.sd_sdi},
                          {"mean_err_tracin", r.mean_tracin},
                          {"sd_err_tracin", r.sd_tracin}});
        }
        write_text(out + ".json", j.dump(2));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train-parity

int cmd_train_parity(uint64_t seed, const std::string& preset_name, const std::string& out_dir) {
    const Presets p = preset(preset_name, seed);
    fs::create_directories(out_dir);

    uint64_t total_steps = 0;
    for (const auto& ph : p.phases) total_steps += ph.steps;
    std::vector<double> etas(total_steps, p.lr);
    // cosine decay to a tenth of the peak over the run
    for (uint64_t i = 0; i < total_steps; ++i) {
        const double frac = static_cast<double>(i) / total_steps;
        etas[i] = p.lr * (0.55 + 0.45 * std::cos(M_PI * frac));
    }

    Parameters params = Parameters::init(p.base);
    TrainOptions opts;
    opts.checkpoint_every = p.checkpoint_every;
    opts.on_step = [&](uint64_t s, double loss) {
        if (s % 100 == 0) std::cout << "step " << s << " loss " << loss << "\n";
    };
    const auto provider = curriculum_provider(p.phases, p.base, p.batch_size, subseed(seed, 1));
    const auto checkpoints = train_sgd(provider, p.base, params, etas, opts);

    std::vector<ManifestEntry> entries;
    for (const auto& ck : checkpoints) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_%06llu.bin",
                      static_cast<unsigned long long>(ck.step));
        save_checkpoint((fs::path(out_dir) / name).string(), ck);
        entries.push_back({name, ck.step, ck.eta});
    }
    write_manifest((fs::path(out_dir) / "manifest.json").string(), p.base, entries);

    const uint32_t max_len = p.phases.back().max_length;
    const auto id_eval = gen_parity(1000, 2, max_len, subseed(seed, 2));
    const auto ood_eval = gen_parity(400, max_len + 1, p.ood_length, subseed(seed, 3));
    const double acc_id = parity_accuracy(params, p.base, id_eval);
    const double acc_ood = parity_accuracy(params, p.base, ood_eval);
    const auto by_len = parity_accuracy_by_length(params, p.base, ood_eval);

    json report;
    report["schema_version"] = 1;
    report["command"] = "train-parity";
    report["preset"] = preset_name;
    report["seed"] = seed;
    report["steps"] = total_steps;
    report["train_accuracy"] = acc_id;
    report["ood_accuracy"] = acc_ood;
    report["ood_max_length"] = p.ood_length;
    auto& bl = report["ood_accuracy_by_length"] = json::object();
    for (const auto& [n, acc] : by_len) bl[std::to_string(n)] = acc;
    report["checkpoints"] = entries.size();
    write_text((fs::path(out_dir) / "training_report.json").string(), report.dump(2));

    // training split sample for downstream SDI runs
    write_parity_jsonl((fs::path(out_dir) / "train_sample.jsonl").string(),
                       gen_parity(256, 2, max_len, subseed(seed, 4)));

    std::cout << "train accuracy " << acc_id << ", ood accuracy " << acc_ood << " ("
              << checkpoints.size() << " checkpoints)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// compute-sdi

int cmd_compute_sdi(const std::string& checkpoints_path, const std::string& train_path,
                    const std::string& query, uint32_t m, uint32_t tau, uint64_t seed,
                    const std::string& out_dir) {
    const Manifest manifest = read_manifest(checkpoints_path);
    fs::create_directories(out_dir);
    const fs::path ck_dir = fs::path(checkpoints_path).parent_path();

    const auto train_set = read_parity_jsonl(train_path);
    std::vector<Example> train_ex;
    for (const auto& pe : train_set) train_ex.push_back(pe.to_model_example());

    // query set: a jsonl path or "probe:<len>" / "probe:<len>:1" for the
    // alternating probes
    std::vector<ParityExample> query_set;
    if (query.rfind("probe:", 0) == 0) {
        const std::string rest = query.substr(6);
        const auto colon = rest.find(':');
        const uint32_t len = static_cast<uint32_t>(std::stoul(rest.substr(0, colon)));
        if (colon == std::string::npos) {
            query_set.push_back(alternating_probe(len, 0));
            query_set.push_back(alternating_probe(len, 1));
        } else {
            query_set.push_back(alternating_probe(len, rest[colon + 1] == '1' ? 1 : 0));
        }
    } else {
        query_set = read_parity_jsonl(query);
    }
    std::vector<Example> query_ex;
    for (const auto& pe : query_set) query_ex.push_back(pe.to_model_example());

    uint32_t analysis_tau = tau;
    for (const auto& ex : train_ex) analysis_tau = std::max(analysis_tau, ex.readout_step);
    for (const auto& ex : query_ex) {
        analysis_tau = std::max(analysis_tau, static_cast<uint32_t>(ex.tokens.size()));
    }

    const auto specs = body_tensor_specs(manifest.config);
    const auto plan = SketchPlan::make(seed, m, specs);
    write_text((fs::path(out_dir) / "sketch_plan.json").string(), plan.to_json());

    // one checkpoint at a time; features cached to disk between passes
    std::vector<double> etas;
    std::vector<std::string> train_caches, query_caches;
    for (size_t k = 0; k < manifest.entries.size(); ++k) {
        const auto& entry = manifest.entries[k];
        const Checkpoint ck = load_checkpoint((ck_dir / entry.file).string(), manifest.config);
        etas.push_back(ck.eta);
        const auto ftrain =
            featurize_examples(ck.params, manifest.config, train_ex, plan, analysis_tau);
        const auto fquery =
            featurize_examples(ck.params, manifest.config, query_ex, plan, analysis_tau);
        const std::string tc =
            (fs::path(out_dir) / ("features_train_" + std::to_string(k) + ".sdif")).string();
        const std::string qc =
            (fs::path(out_dir) / ("features_query_" + std::to_string(k) + ".sdif")).string();
        write_feature_cache(tc, ftrain);
        write_feature_cache(qc, fquery);
        train_caches.push_back(tc);
        query_caches.push_back(qc);
        std::cout << "featurized checkpoint " << entry.file << "\n";
    }

    CheckpointFeatures train_feats, query_feats;
    for (size_t k = 0; k < train_caches.size(); ++k) {
        train_feats.push_back(read_feature_cache(train_caches[k], plan.plan_id()));
        query_feats.push_back(read_feature_cache(query_caches[k], plan.plan_id()));
        train_feats.back().ids.clear();
        query_feats.back().ids.clear();
        for (const auto& ex : train_ex) train_feats.back().ids.push_back(ex.id);
        for (const auto& ex : query_ex) query_feats.back().ids.push_back(ex.id);
    }

    std::vector<InfluenceTrajectory> trajectories;
    for (uint32_t i = 0; i < train_ex.size(); ++i) {
        for (uint32_t j = 0; j < query_ex.size(); ++j) {
            trajectories.push_back(sdi_test_side(train_feats, query_feats, etas, i, j));
        }
    }
    write_influence_json((fs::path(out_dir) / "sdi.json").string(), trajectories);
    write_influence_csv((fs::path(out_dir) / "sdi.csv").string(), trajectories);

    // summed SDI profile per query across the training set
    json profile;
    profile["schema_version"] = 1;
    profile["command"] = "compute-sdi";
    profile["m"] = m;
    profile["tau"] = analysis_tau;
    profile["seed"] = seed;
    auto& queries = profile["summed_profiles"] = json::object();
    for (uint32_t j = 0; j < query_ex.size(); ++j) {
        std::vector<double> sum(analysis_tau, 0.0);
        for (uint32_t i = 0; i < train_ex.size(); ++i) {
            const auto& steps = trajectories[static_cast<size_t>(i) * query_ex.size() + j].steps;
            for (uint32_t t = 0; t < analysis_tau; ++t) sum[t] += steps[t];
        }
        queries[query_ex[j].id] = sum;
    }
    write_text((fs::path(out_dir) / "sdi_profile.json").string(), profile.dump(2));
    std::cout << "wrote " << trajectories.size() << " trajectories\n";
    return 0;
}

// ---------------------------------------------------------------------------
// analyze-cycle

int cmd_analyze_cycle(const std::string& checkpoints_path, uint32_t probe_length,
                      uint8_t probe_first_bit, uint32_t k, double percentile, uint64_t seed,
                      const std::string& out) {
    const Manifest manifest = read_manifest(checkpoints_path);
    if (manifest.entries.empty()) throw std::runtime_error("manifest lists no checkpoints");
    const fs::path ck_dir = fs::path(checkpoints_path).parent_path();
    const Checkpoint ck =
        load_checkpoint((ck_dir / manifest.entries.back().file).string(), manifest.config);

    CycleOptions opts;
    opts.k = k;
    opts.seed = seed;
    opts.selective_percentile = percentile;
    opts.max_probe_length = probe_length;
    const ParityExample probe = alternating_probe(probe_length, probe_first_bit);
    const CycleReport report = analyze_cycle(ck.params, manifest.config, probe, opts);
    if (!out.empty()) write_text(out, report.to_json());
    std::cout << "cycle report: k=" << report.k
              << " proxy_accuracy=" << report.proxy_accuracy
              << (report.degenerate ? " (degenerate)" : "") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sdi-energy

int cmd_sdi_energy(const std::string& sdi_path, uint32_t bins,
                   const std::string& difficulty_csv, const std::string& out) {
    const json doc = json::parse(read_text(sdi_path));
    std::vector<InfluenceTrajectory> trajectories;
    for (const auto& pair : doc.at("pairs")) {
        InfluenceTrajectory t;
        t.train_id = pair.at("train_id").get<std::string>();
        t.test_id = pair.at("test_id").get<std::string>();
        t.tracin = pair.at("tracin").get<double>();
        t.steps = pair.at("steps").get<std::vector<double>>();
        trajectories.push_back(std::move(t));
    }

    std::map<std::string, double> difficulty;
    const bool have_difficulty = !difficulty_csv.empty();
    if (have_difficulty) {
        std::ifstream is(difficulty_csv);
        if (!is) throw std::runtime_error("cannot open " + difficulty_csv);
        std::string line;
        std::getline(is, line);  // header: test_id,difficulty
        while (std::getline(is, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            difficulty[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
        }
    }

    const auto rows = sdi_energy(trajectories, have_difficulty ? &difficulty : nullptr);
    const auto summaries = aggregate_energy(rows, bins);

    std::ostringstream csv;
    csv.precision(12);
    csv << "kind,bin,bin_lo,bin_hi,test_id,late_mass";
    const size_t tau = rows.empty() ? 0 : rows[0].energy.size();
    for (size_t t = 1; t <= tau; ++t) csv << ",e_" << t;
    csv << "\n";
    for (const auto& r : rows) {
        csv << "query,,,," << r.test_id << "," << r.late_mass;
        for (double e : r.energy) csv << "," << e;
        csv << "\n";
    }
    for (const auto& s : summaries) {
        csv << "bin_median," << s.bin << "," << s.lo << "," << s.hi << ",," << "";
        for (double e : s.median) csv << "," << e;
        csv << "\n";
        csv << "bin_q25," << s.bin << "," << s.lo << "," << s.hi << ",,";
        for (double e : s.q25) csv << "," << e;
        csv << "\n";
        csv << "bin_q75," << s.bin << "," << s.lo << "," << s.hi << ",,";
        for (double e : s.q75) csv << "," << e;
        csv << "\n";
    }
    if (!out.empty()) write_text(out, csv.str());
    std::cout << "energy rows: " << rows.size() << ", bins: " << summaries.size() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sdikit: step-resolved influence toolkit for looped transformers"};
    app.require_subcommand(1);
    app.fallthrough();  // lets --seed appear after the subcommand name

    uint64_t seed = 0;
    app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

    // verify-sketch
    auto* verify = app.add_subcommand("verify-sketch", "run the sketch/variance checks");
    std::vector<uint32_t> m_list;
    uint64_t trials = 200000;
    std::string verify_out;
    verify->add_option("--m", m_list, "sketch dimensions to exercise");
    verify->add_option("--trials", trials, "Monte-Carlo trials per check")->capture_default_str();
    verify->add_option("--out", verify_out, "JSON report path");

    // bench-fidelity
    auto* bench = app.add_subcommand("bench-fidelity", "sketched vs exact SDI error scaling");
    std::vector<uint32_t> bench_m;
    uint32_t bench_seeds = 10;
    std::string bench_preset = "micro";
    std::string bench_out;
    bench->add_option("--m", bench_m, "sketch dimensions");
    bench->add_option("--seeds", bench_seeds, "independent plan seeds per m")
        ->capture_default_str();
    bench->add_option("--preset", bench_preset, "micro|full")->capture_default_str();
    bench->add_option("--out", bench_out, "CSV output path");

    // train-parity
    auto* train = app.add_subcommand("train-parity", "train the parity micro model");
    std::string train_preset = "micro";
    std::string train_out = "parity_run";
    train->add_option("--preset", train_preset, "micro|full")->capture_default_str();
    train->add_option("--out", train_out, "output directory")->capture_default_str();

    // compute-sdi
    auto* sdi = app.add_subcommand("compute-sdi", "sketched SDI/TracIn for train x query pairs");
    std::string sdi_ck, sdi_train, sdi_query, sdi_out = "sdi_run";
    uint32_t sdi_m = 2048, sdi_tau = 0;
    sdi->add_option("--checkpoints", sdi_ck, "manifest.json from train-parity")->required();
    sdi->add_option("--train-set", sdi_train, "training split (jsonl)")->required();
    sdi->add_option("--query-set", sdi_query, "query split (jsonl) or probe:<len>[:first_bit]")
        ->required();
    sdi->add_option("--m", sdi_m, "sketch dimension")->capture_default_str();
    sdi->add_option("--tau", sdi_tau, "analysis loop horizon (0 = derive from data)")
        ->capture_default_str();
    sdi->add_option("--out", sdi_out, "output directory")->capture_default_str();

    // analyze-cycle
    auto* cycle = app.add_subcommand("analyze-cycle", "hidden-state cycle analysis on a probe");
    std::string cyc_ck, cyc_out;
    uint32_t cyc_len = 12, cyc_k = 4;
    uint8_t cyc_first = 0;
    double cyc_pct = 95.0;
    cycle->add_option("--checkpoints", cyc_ck, "manifest.json")->required();
    cycle->add_option("--probe-length", cyc_len, "alternating probe length")
        ->capture_default_str();
    cycle->add_option("--probe-first-bit", cyc_first, "0 or 1")->capture_default_str();
    cycle->add_option("--k", cyc_k, "clusters")->capture_default_str();
    cycle->add_option("--percentile", cyc_pct, "selective proxy distance percentile")
        ->capture_default_str();
    cycle->add_option("--out", cyc_out, "JSON report path");

    // sdi-energy
    auto* energy = app.add_subcommand("sdi-energy", "per-step energy curves from SDI artifacts");
    std::string en_sdi, en_diff, en_out;
    uint32_t en_bins = 3;
    energy->add_option("--sdi", en_sdi, "sdi.json produced by compute-sdi")->required();
    energy->add_option("--bins", en_bins, "difficulty bins")->capture_default_str();
    energy->add_option("--difficulty", en_diff, "CSV test_id,difficulty");
    energy->add_option("--out", en_out, "CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return cmd_verify_sketch(seed, m_list, trials, verify_out);
        if (bench->parsed()) {
            return cmd_bench_fidelity(seed, bench_m, bench_seeds, bench_preset, bench_out);
        }
        if (train->parsed()) return cmd_train_parity(seed, train_preset, train_out);
        if (sdi->parsed()) {
            return cmd_compute_sdi(sdi_ck, sdi_train, sdi_query, sdi_m, sdi_tau, seed, sdi_out);
        }
        if (cycle->parsed()) {
            return cmd_analyze_cycle(cyc_ck, cyc_len, cyc_first, cyc_k, cyc_pct, seed, cyc_out);
        }
        if (energy->parsed()) return cmd_sdi_energy(en_sdi, en_bins, en_diff, en_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
