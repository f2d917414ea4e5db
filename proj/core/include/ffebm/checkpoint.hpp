#pragma once

#include "ffebm/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ffebm {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout: "FFEBM\0", u16 version, u32 header length, JSON header
/// {"tensors": [{name, shape, dtype, offset}]}, then little-endian payloads in header order.
/// Offsets are relative to the start of the payload section.
std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const TensorMap& tensors, const std::string& path);
TensorMap load_checkpoint(const std::string& path);

}  // namespace ffebm
