#include "sdikit/parity.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sdikit/random.hpp"

namespace sdikit {

Example ParityExample::to_model_example() const {
    if (bits.empty()) throw std::invalid_argument("parity: empty bit string");
    const uint32_t len = seq_len();
    Example ex;
    ex.tokens.reserve(len);
    for (uint8_t b : bits) ex.tokens.push_back(b ? parity_tokens::kBit1 : parity_tokens::kBit0);
    ex.tokens.push_back(parity_tokens::kEquals);
    while (ex.tokens.size() < len) ex.tokens.push_back(parity_tokens::kPad);
    ex.targets.assign(len, 0);
    ex.loss_mask.assign(len, 0);
    ex.targets[n()] = label;
    ex.loss_mask[n()] = 1;
    ex.readout_step = readout_step();
    ex.id = id;
    return ex;
}

std::vector<ParityExample> gen_parity(size_t count, uint32_t min_len, uint32_t max_len,
                                      uint64_t seed) {
    if (min_len < 1 || max_len < min_len) {
        throw std::invalid_argument("gen_parity: bad length range");
    }
    std::mt19937_64 rng(seed);
    std::vector<ParityExample> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        ParityExample p;
        const uint32_t n =
            min_len + static_cast<uint32_t>(uniform_below(rng, max_len - min_len + 1));
        p.bits.resize(n);
        uint8_t acc = 0;
        for (auto& b : p.bits) {
            b = static_cast<uint8_t>(rng() & 1ULL);
            acc ^= b;
        }
        p.label = acc;
        p.id = "parity_" + std::to_string(i);
        out.push_back(std::move(p));
    }
    return out;
}

ParityExample alternating_probe(uint32_t length, uint8_t first_bit) {
    if (length < 1) throw std::invalid_argument("alternating_probe: length must be >= 1");
    ParityExample p;
    p.bits.resize(length);
    uint8_t acc = 0;
    for (uint32_t i = 0; i < length; ++i) {
        p.bits[i] = static_cast<uint8_t>((i % 2 == 0) ? first_bit : 1 - first_bit);
        acc ^= p.bits[i];
    }
    p.label = acc;
    p.id = std::string("probe_") + (first_bit ? "10" : "01") + "_" + std::to_string(length);
    return p;
}

ModelConfig parity_config(const ModelConfig& base, uint32_t n) {
    ModelConfig cfg = base;
    cfg.vocab_size = parity_tokens::kVocab;
    cfg.seq_len = n + 2;
    cfg.loop_horizon = n + 2;
    return cfg;
}

BatchProvider curriculum_provider(std::vector<CurriculumPhase> phases, const ModelConfig& base,
                                  uint32_t batch_size, uint64_t seed) {
    if (phases.empty()) throw std::invalid_argument("curriculum: no phases");
    for (const auto& ph : phases) {
        if (ph.max_length < 2) throw std::invalid_argument("curriculum: max_length must be >= 2");
    }
    return [phases = std::move(phases), base, batch_size, seed](uint64_t step) -> Batch {
        uint64_t remaining = step;
        const CurriculumPhase* phase = &phases.back();
        for (const auto& ph : phases) {
            if (remaining < ph.steps) {
                phase = &ph;
                break;
            }
            remaining -= ph.steps;
        }
        std::mt19937_64 rng(subseed(seed, step));
        const uint32_t n = 2 + static_cast<uint32_t>(uniform_below(rng, phase->max_length - 1));
        Batch batch;
        batch.cfg = parity_config(base, n);
        batch.examples.reserve(batch_size);
        for (uint32_t b = 0; b < batch_size; ++b) {
            ParityExample p;
            p.bits.resize(n);
            uint8_t acc = 0;
            for (auto& bit : p.bits) {
                bit = static_cast<uint8_t>(rng() & 1ULL);
                acc ^= bit;
            }
            p.label = acc;
            batch.examples.push_back(p.to_model_example());
        }
        return batch;
    };
}

namespace {

bool parity_correct(const Parameters& params, const ModelConfig& base, const ParityExample& p) {
    const ModelConfig cfg = parity_config(base, p.n());
    const StepTrace trace = forward(params, cfg, p.to_model_example());
    const double* lj = trace.logits.data() + static_cast<size_t>(p.n()) * cfg.vocab_size;
    uint32_t best = 0;
    for (uint32_t c = 1; c < cfg.vocab_size; ++c) {
        if (lj[c] > lj[best]) best = c;
    }
    return best == p.label;
}

}  // namespace

double parity_accuracy(const Parameters& params, const ModelConfig& base,
                       std::span<const ParityExample> examples) {
    if (examples.empty()) return 0.0;
    size_t correct = 0;
    for (const auto& p : examples) {
        if (parity_correct(params, base, p)) ++correct;
    }
    return static_cast<double>(correct) / examples.size();
}

std::map<uint32_t, double> parity_accuracy_by_length(const Parameters& params,
                                                     const ModelConfig& base,
                                                     std::span<const ParityExample> examples) {
    std::map<uint32_t, std::pair<size_t, size_t>> counts;  // n -> (correct, total)
    for (const auto& p : examples) {
        auto& c = counts[p.n()];
        c.first += parity_correct(params, base, p) ? 1 : 0;
        c.second += 1;
    }
    std::map<uint32_t, double> out;
    for (const auto& [n, c] : counts) {
        out[n] = static_cast<double>(c.first) / static_cast<double>(c.second);
    }
    return out;
}

void write_parity_jsonl(const std::string& path, std::span<const ParityExample> examples) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("parity dataset: cannot open " + path);
    for (const auto& p : examples) {
        std::string bits;
        bits.reserve(p.bits.size());
        for (uint8_t b : p.bits) bits.push_back(b ? '1' : '0');
        nlohmann::json j{{"bits", bits}, {"n", p.n()}, {"label", p.label}};
        os << j.dump() << "\n";
    }
}

std::vector<ParityExample> read_parity_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("parity dataset: cannot open " + path);
    std::vector<ParityExample> out;
    std::string line;
    size_t idx = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        ParityExample p;
        const std::string bits = j.at("bits").get<std::string>();
        p.bits.reserve(bits.size());
        uint8_t acc = 0;
        for (char c : bits) {
            if (c != '0' && c != '1') throw std::runtime_error("parity dataset: bad bit char");
            p.bits.push_back(c == '1');
            acc ^= (c == '1');
        }
        p.label = j.contains("label") ? j.at("label").get<uint8_t>() : acc;
        if (p.label != acc) throw std::runtime_error("parity dataset: label != XOR of bits");
        p.id = "parity_" + std::to_string(idx++);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace sdikit
