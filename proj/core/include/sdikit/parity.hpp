#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdikit/model.hpp"

namespace sdikit {

/// Token ids for the parity vocabulary (size 6; ids 4 and 5 are unused).
namespace parity_tokens {
constexpr uint32_t kBit0 = 0;
constexpr uint32_t kBit1 = 1;
constexpr uint32_t kEquals = 2;
constexpr uint32_t kPad = 3;
constexpr uint32_t kVocab = 6;
}  // namespace parity_tokens

/// One parity instance: n random bits followed by '=' and padding to
/// length n+2. The label is the XOR of the bits; the loss is masked to the
/// '=' position and the model state is read out at loop step n.
struct ParityExample {
    std::vector<uint8_t> bits;
    uint8_t label = 0;
    std::string id;

    uint32_t n() const { return static_cast<uint32_t>(bits.size()); }
    uint32_t seq_len() const { return n() + 2; }
    uint32_t readout_step() const { return n(); }

    Example to_model_example() const;
};

std::vector<ParityExample> gen_parity(size_t count, uint32_t min_len, uint32_t max_len,
                                      uint64_t seed);

/// Alternating probe 0101... (first_bit=0) or 1010... (first_bit=1).
ParityExample alternating_probe(uint32_t length, uint8_t first_bit = 0);

/// Model config bound to one example length: seq_len = loop_horizon = n+2.
ModelConfig parity_config(const ModelConfig& base, uint32_t n);

struct CurriculumPhase {
    uint64_t steps = 0;
    uint32_t max_length = 2;
};

/// Batch driver: picks the phase by cumulative step count, samples a batch
/// length uniformly in [2, phase.max_length], then fills the batch with
/// fresh random examples of that one length.
BatchProvider curriculum_provider(std::vector<CurriculumPhase> phases, const ModelConfig& base,
                                  uint32_t batch_size, uint64_t seed);

/// Fraction of examples whose argmax logit at the '=' position equals the
/// parity label.
double parity_accuracy(const Parameters& params, const ModelConfig& base,
                       std::span<const ParityExample> examples);

/// Accuracy split by bit-string length.
std::map<uint32_t, double> parity_accuracy_by_length(const Parameters& params,
                                                     const ModelConfig& base,
                                                     std::span<const ParityExample> examples);

/// JSON lines: {"bits": "0101", "n": 4, "label": 0}
void write_parity_jsonl(const std::string& path, std::span<const ParityExample> examples);
std::vector<ParityExample> read_parity_jsonl(const std::string& path);

}  // namespace sdikit
