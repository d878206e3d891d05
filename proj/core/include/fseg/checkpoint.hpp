#pragma once

#include <map>
#include <string>

#include "fseg/tensor.hpp"

namespace fseg::ad {

// Named float32 tensors, iterated in name order so serialization is stable.
using ParamStore = std::map<std::string, ArrayF>;

// Checkpoint layout: magic "FSEGCKPT", u32 version, u32 tensor count, then
// per tensor: u16 name length, UTF-8 name, u8 rank, u32 per-dim extents,
// little-endian float32 payload. Tensors are written in name order.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

}  // namespace fseg::ad
