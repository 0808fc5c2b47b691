#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvvae/tensor.hpp"

namespace mvvae {

// Single-file model archive. Layout (all integers little-endian):
//   u32 magic 'MVCK' (0x4B43564D), u32 format version (1), u64 seed,
//   u32 config length, config text bytes,
//   u32 array count, then per array:
//     u32 name length, name bytes, u32 ndim, u32 dims[ndim],
//     u32 dtype (0 = float64), float64 data.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t seed = 0;
  std::string config_text;
  std::map<std::string, Tensor> arrays;
};

inline constexpr std::uint32_t kCheckpointMagic = 0x4B43564D;
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // throws DataError

}  // namespace mvvae
