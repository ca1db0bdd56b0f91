#include "sdikit/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sdikit {

namespace {

constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
    const auto tensors = ck.params.all_tensors();
    os.write("SDI1", 4);
    write_pod<uint32_t>(os, kVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t->dims.size()));
        for (uint32_t d : t->dims) write_pod<uint32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t->data.data()),
                 static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
    write_pod<double>(os, ck.eta);
    write_pod<uint64_t>(os, ck.step);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SDI1", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    const uint32_t count = read_pod<uint32_t>(is);

    Checkpoint ck;
    ck.params = Parameters::zeros_like(cfg);
    auto tensors = ck.params.all_tensors();
    if (count != tensors.size()) {
        throw std::runtime_error("checkpoint: tensor count does not match the model");
    }
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rank = read_pod<uint32_t>(is);
        std::vector<uint32_t> dims(rank);
        for (auto& d : dims) d = read_pod<uint32_t>(is);

        Tensor* dst = nullptr;
        for (auto& [n, t] : tensors) {
            if (n == name) {
                dst = t;
                break;
            }
        }
        if (dst == nullptr) throw std::runtime_error("checkpoint: unknown tensor " + name);
        if (dims != dst->dims) {
            throw std::runtime_error("checkpoint: shape mismatch for tensor " + name);
        }
        is.read(reinterpret_cast<char*>(dst->data.data()),
                static_cast<std::streamsize>(dst->data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    }
    ck.eta = read_pod<double>(is);
    ck.step = read_pod<uint64_t>(is);
    return ck;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_heads"] = cfg.n_heads;
    j["seq_len"] = cfg.seq_len;
    j["loop_horizon"] = cfg.loop_horizon;
    j["injection"] = cfg.injection == Injection::additive ? "additive" : "none";
    j["nonlinearity"] = cfg.nonlinearity == Nonlinearity::relu ? "relu" : "gelu";
    j["truncation_k"] = cfg.truncation_k;
    j["causal"] = cfg.causal;
    j["sinusoidal_pos"] = cfg.sinusoidal_pos;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<uint32_t>();
    cfg.d_model = j.at("d_model").get<uint32_t>();
    cfg.n_heads = j.at("n_heads").get<uint32_t>();
    cfg.seq_len = j.at("seq_len").get<uint32_t>();
    cfg.loop_horizon = j.at("loop_horizon").get<uint32_t>();
    cfg.injection =
        j.at("injection").get<std::string>() == "additive" ? Injection::additive : Injection::none;
    cfg.nonlinearity =
        j.at("nonlinearity").get<std::string>() == "relu" ? Nonlinearity::relu : Nonlinearity::gelu;
    cfg.truncation_k = j.at("truncation_k").get<uint32_t>();
    cfg.causal = j.at("causal").get<bool>();
    cfg.sinusoidal_pos = j.value("sinusoidal_pos", true);
    cfg.seed = j.at("seed").get<uint64_t>();
    return cfg;
}

void write_manifest(const std::string& path, const ModelConfig& cfg,
                    const std::vector<ManifestEntry>& entries) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["model"] = nlohmann::json::parse(model_config_to_json(cfg));
    auto& list = j["checkpoints"] = nlohmann::json::array();
    for (const auto& e : entries) {
        list.push_back({{"file", e.file}, {"step", e.step}, {"eta", e.eta}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("manifest: cannot open " + path);
    os << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open " + path);
    nlohmann::json j;
    is >> j;
    Manifest m;
    m.config = model_config_from_json(j.at("model").dump());
    for (const auto& e : j.at("checkpoints")) {
        m.entries.push_back(ManifestEntry{e.at("file").get<std::string>(),
                                          e.at("step").get<uint64_t>(),
                                          e.at("eta").get<double>()});
    }
    return m;
}

}  // namespace sdikit
