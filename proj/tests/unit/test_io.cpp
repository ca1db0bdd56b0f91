#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sdikit/checkpoint.hpp"

using namespace sdikit;

namespace {

ModelConfig io_config() {
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.seq_len = 4;
    cfg.loop_horizon = 3;
    cfg.seed = 77;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint binary round trip") {
    const ModelConfig cfg = io_config();
    Checkpoint ck;
    ck.params = Parameters::init(cfg);
    ck.eta = 0.375;
    ck.step = 42;

    const auto tmp = std::filesystem::temp_directory_path() / "sdikit_ck_test.bin";
    save_checkpoint(tmp.string(), ck);
    const Checkpoint back = load_checkpoint(tmp.string(), cfg);
    CHECK(back.eta == ck.eta);
    CHECK(back.step == ck.step);
    auto ta = ck.params.all_tensors();
    auto tb = back.params.all_tensors();
    for (size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].second->data == tb[i].second->data);  // bit-identical
    }
    std::filesystem::remove(tmp);
}

TEST_CASE("checkpoint header layout is stable") {
    const ModelConfig cfg = io_config();
    Checkpoint ck;
    ck.params = Parameters::init(cfg);
    const auto tmp = std::filesystem::temp_directory_path() / "sdikit_ck_magic.bin";
    save_checkpoint(tmp.string(), ck);
    std::ifstream is(tmp, std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "SDI1");
    uint32_t version = 0, count = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&count), 4);
    CHECK(version == 1);
    CHECK(count == 15);
    std::filesystem::remove(tmp);
}

TEST_CASE("loading rejects a mismatched model") {
    const ModelConfig cfg = io_config();
    Checkpoint ck;
    ck.params = Parameters::init(cfg);
    const auto tmp = std::filesystem::temp_directory_path() / "sdikit_ck_mismatch.bin";
    save_checkpoint(tmp.string(), ck);
    ModelConfig other = cfg;
    other.d_model = 16;
    CHECK_THROWS_AS(load_checkpoint(tmp.string(), other), std::runtime_error);
    std::filesystem::remove(tmp);
}

TEST_CASE("model config json round trip") {
    ModelConfig cfg = io_config();
    cfg.injection = Injection::none;
    cfg.nonlinearity = Nonlinearity::gelu;
    cfg.truncation_k = 2;
    cfg.causal = false;
    const ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.vocab_size == cfg.vocab_size);
    CHECK(back.d_model == cfg.d_model);
    CHECK(back.n_heads == cfg.n_heads);
    CHECK(back.seq_len == cfg.seq_len);
    CHECK(back.loop_horizon == cfg.loop_horizon);
    CHECK((back.injection == cfg.injection));
    CHECK((back.nonlinearity == cfg.nonlinearity));
    CHECK(back.truncation_k == cfg.truncation_k);
    CHECK(back.causal == cfg.causal);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("manifest round trip preserves training order") {
    const ModelConfig cfg = io_config();
    const std::vector<ManifestEntry> entries{{"ck_000100.bin", 100, 0.5},
                                             {"ck_000200.bin", 200, 0.25}};
    const auto tmp = std::filesystem::temp_directory_path() / "sdikit_manifest_test.json";
    write_manifest(tmp.string(), cfg, entries);
    const Manifest m = read_manifest(tmp.string());
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0].file == "ck_000100.bin");
    CHECK(m.entries[0].step == 100);
    CHECK(m.entries[0].eta == 0.5);
    CHECK(m.entries[1].file == "ck_000200.bin");
    CHECK(m.config.d_model == cfg.d_model);
    std::filesystem::remove(tmp);
}
