#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "cddsa/core/array.hpp"

// Single-file checkpoint archive, versioned: an 8-byte magic, a JSON header
// (model config, training metadata, tensor directory) and raw little-endian
// float32 payloads in directory order. Covers network parameters, batch-norm
// buffers and optimizer moments.

namespace cddsa::checkpoint {

inline constexpr char kMagic[8] = {'C', 'D', 'D', 'S', 'A', 'C', 'K', '1'};
inline constexpr int kFormatVersion = 1;

struct Archive {
    nlohmann::json meta;  // model_config, epoch, lr, seed, free-form extras
    std::vector<std::pair<std::string, nn::Array<float>>> tensors;

    const nn::Array<float>* find(const std::string& name) const;
};

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

}  // namespace cddsa::checkpoint
