#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "steerkit/errors.hpp"
#include "steerkit/tensor.hpp"

namespace steerkit {

// Named-tensor archive.
//
// Layout (all integers little-endian):
//   magic "HSTR1" | version u32 | entry count u64
//   per entry: name length u32 | UTF-8 name | dtype u32 (0=f32, 1=f64)
//              | rank u32 | dims u64 x rank | raw values
//   trailing checksum u64 (FNV-1a over every preceding byte)
//
// Save -> load round-trips are bit-exact. Load distinguishes bad magic, bad
// version, and checksum failure.

struct NamedTensors {
    // Ordered by name so serialization is deterministic.
    std::map<std::string, TensorF> entries;
};

// Training diverged (NaN/Inf loss or a numeric blowup mid-step). Carries the
// last good parameter snapshot, which has also been restored into the model.
struct DivergenceError : TrainingError {
    DivergenceError(const std::string& msg, NamedTensors ckpt)
        : TrainingError(msg), checkpoint(std::move(ckpt)) {}
    NamedTensors checkpoint;
};

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& tensors);
NamedTensors deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const NamedTensors& tensors, const std::string& path);
NamedTensors load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

}  // namespace steerkit
