#include <doctest.h>

#include <filesystem>

#include "sdikit/parity.hpp"

using namespace sdikit;

TEST_CASE("labels are the XOR of the bits") {
    ParityExample p;
    p.bits = {0, 1, 0, 1};
    p.label = 0;
    const Example ex = p.to_model_example();
    CHECK(ex.tokens == std::vector<uint32_t>{0, 1, 0, 1, 2, 3});
    CHECK(ex.readout_step == 4);
    CHECK(ex.loss_mask[4] == 1);
    CHECK(ex.targets[4] == 0);
    for (size_t i = 0; i < ex.loss_mask.size(); ++i) {
        if (i != 4) CHECK(ex.loss_mask[i] == 0);
    }
}

TEST_CASE("single-bit example") {
    const auto probes = gen_parity(200, 1, 1, 5);
    for (const auto& p : probes) {
        CHECK(p.n() == 1);
        CHECK(p.label == p.bits[0]);
        CHECK(p.to_model_example().readout_step == 1);
        CHECK(p.seq_len() == 3);
    }
}

TEST_CASE("generation is label-consistent and deterministic") {
    const auto a = gen_parity(500, 2, 12, 99);
    const auto b = gen_parity(500, 2, 12, 99);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].bits == b[i].bits);
        uint8_t acc = 0;
        for (uint8_t bit : a[i].bits) acc ^= bit;
        CHECK(a[i].label == acc);
    }
}

TEST_CASE("label mean is near one half at n = 8") {
    const auto sample = gen_parity(10000, 8, 8, 123);
    double mean = 0.0;
    for (const auto& p : sample) mean += p.label;
    mean /= sample.size();
    CHECK(mean > 0.48);
    CHECK(mean < 0.52);
}

TEST_CASE("alternating probes") {
    const auto p40 = alternating_probe(40, 0);
    CHECK(p40.label == 0);
    CHECK(p40.bits[0] == 0);
    CHECK(p40.bits[1] == 1);

    const auto p2 = alternating_probe(2, 0);
    CHECK(p2.bits == std::vector<uint8_t>{0, 1});
    CHECK(p2.label == 1);

    const auto p5 = alternating_probe(5, 1);
    CHECK(p5.bits == std::vector<uint8_t>{1, 0, 1, 0, 1});
    CHECK(p5.label == 1);
}

TEST_CASE("curriculum provider stays in phase and in range") {
    ModelConfig base;
    base.d_model = 8;
    base.n_heads = 2;
    base.vocab_size = parity_tokens::kVocab;
    const std::vector<CurriculumPhase> phases{{10, 4}, {10, 8}};
    const auto provider = curriculum_provider(phases, base, 4, 3);

    for (uint64_t step = 0; step < 20; ++step) {
        const Batch batch = provider(step);
        CHECK(batch.examples.size() == 4);
        const uint32_t n = batch.cfg.seq_len - 2;
        CHECK(n >= 2);
        CHECK(n <= (step < 10 ? 4u : 8u));
        CHECK(batch.cfg.loop_horizon == batch.cfg.seq_len);
        for (const auto& ex : batch.examples) {
            CHECK(ex.tokens.size() == batch.cfg.seq_len);
            CHECK(ex.readout_step == n);
        }
    }
    // deterministic
    const auto provider2 = curriculum_provider(phases, base, 4, 3);
    const Batch x = provider(7), y = provider2(7);
    for (size_t i = 0; i < x.examples.size(); ++i) CHECK(x.examples[i].tokens == y.examples[i].tokens);
}

TEST_CASE("jsonl round trip") {
    const auto examples = gen_parity(50, 2, 10, 777);
    const auto tmp = std::filesystem::temp_directory_path() / "sdikit_parity_test.jsonl";
    write_parity_jsonl(tmp.string(), examples);
    const auto back = read_parity_jsonl(tmp.string());
    REQUIRE(back.size() == examples.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].bits == examples[i].bits);
        CHECK(back[i].label == examples[i].label);
    }
    std::filesystem::remove(tmp);
}
