#pragma once

// Versioned binary checkpoint:
//   magic "NLEDN\0" | u16 version | config block | u32 tensor count |
//   per tensor: u32 name length, name bytes, u32 rank, u32 extents...,
//   raw f32 payload | u32 CRC32
// All integers and floats little-endian. The CRC covers every byte after
// the magic+version prefix. A sibling format ("NLEDNST\0") carries
// optimizer state for exact training resume.

#include <cstdint>
#include <string>
#include <vector>

#include "nledn/model.hpp"

namespace nledn {

constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const NlednModel& model, const std::string& path);
NlednModel load_checkpoint(const std::string& path);

// Opaque named-tensor bundle used for optimizer state.
struct TensorBundle {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<std::pair<std::string, std::string>> scalars;  // key=value text fields

    const Tensor* find_tensor(const std::string& name) const;
    std::string scalar(const std::string& key) const;  // throws if missing
};

void save_bundle(const TensorBundle& bundle, const std::string& path);
TensorBundle load_bundle(const std::string& path);

}  // namespace nledn
