#pragma once

#include <string>
#include <vector>

#include "sdikit/model.hpp"

namespace sdikit {

/// Binary checkpoint, little-endian:
///   header  {magic "SDI1", version u32, count u32}
///   tensor  {name_len u32, name bytes, rank u32, dims u32[rank], f64 row-major}
///   footer  {eta f64, step u64}
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct ManifestEntry {
    std::string file;
    uint64_t step = 0;
    double eta = 0.0;
};

/// JSON manifest listing checkpoint files in training order, together with
/// the model configuration needed to reload them.
void write_manifest(const std::string& path, const ModelConfig& cfg,
                    const std::vector<ManifestEntry>& entries);

struct Manifest {
    ModelConfig config;
    std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::string& path);

}  // namespace sdikit
