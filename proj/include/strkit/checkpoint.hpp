#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "strkit/nn_types.hpp"

namespace strkit::ckpt {

// Checkpoint directory layout: manifest.json (config, seed, creation step,
// array index, checksums) next to arrays.bin, a single blob of raw
// little-endian float32 arrays at manifest-recorded offsets.

struct ArrayRef {
    std::string name;
    std::vector<size_t> shape;
    const float* data = nullptr;
    size_t count = 0;
};

struct LoadedArray {
    std::vector<size_t> shape;
    std::vector<float> data;
};

struct Loaded {
    nlohmann::json manifest;
    std::map<std::string, LoadedArray> arrays;
};

// extra: caller fields merged into the manifest (kind, config, seed, step...).
void write_dir(const std::string& dir, nlohmann::json extra, const std::vector<ArrayRef>& arrays);

// Validates the blob checksum and every index entry; throws data_error on
// any integrity violation.
Loaded read_dir(const std::string& dir);

// Model checkpoints.
void save_model(const std::string& dir, const Parameters<float>& params, int64_t step);
Parameters<float> load_model(const std::string& dir);

std::string checksum_hex(const Parameters<float>& params);

} // namespace strkit::ckpt
