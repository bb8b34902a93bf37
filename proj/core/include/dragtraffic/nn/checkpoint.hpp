#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "dragtraffic/nn/params.hpp"

namespace dragtraffic::nn {

/// Binary named-tensor archive, little-endian:
///
///   "DTCKPT\0\0"  u32 version  i64 step
///   u32 meta_len  meta_len bytes of JSON metadata
///   u32 count, then per tensor:
///     u16 name_len name  u16 group_len group  u8 dtype (1 = f64)  u8 rank
///     u64 dims[rank]  f64 data[prod(dims)]
///
/// Frozen groups are listed in the metadata under "frozen_groups".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  nlohmann::json metadata = nlohmann::json::object();
  std::int64_t step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dragtraffic::nn
