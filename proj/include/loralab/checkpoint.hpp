// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: an 8-byte little-endian header length, a JSON
// header {version, config, manifest}, then a raw payload of float32
// little-endian tensors. Manifest entries carry name, shape, dtype ("f32"),
// byte offset and length; offsets are ascending and non-overlapping, and
// the loader verifies the whole manifest against the payload before
// materializing anything. Round trips are bit-exact.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "loralab/tensor.hpp"

namespace loralab {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TensorEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct CheckpointData {
    nlohmann::ordered_json config;
    std::int64_t trained_steps = 0;
    std::vector<TensorEntry> tensors;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint_file(const CheckpointData& ckpt, const std::string& path);
CheckpointData load_checkpoint_file(const std::string& path);

}  // namespace loralab
