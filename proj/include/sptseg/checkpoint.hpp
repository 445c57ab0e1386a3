#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sptseg/tensor.hpp"

namespace sptseg {

// Binary layout, little-endian throughout:
//   "SPTSEG1\0"  u32 version  u32 config_len  config bytes
//   u32 tensor_count, then per tensor:
//     u32 name_len  name  u8 dtype (1 = f32, 2 = f64)  u32 rank  u64 extents[rank]
//     row-major payload
//   u32 CRC-32 over every preceding byte

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointData {
  std::string config_text;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> save_checkpoint(const CheckpointData& data, DType dtype = DType::kF64);

/// Validates magic, version, structure and CRC. Throws CheckpointError.
CheckpointData load_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace sptseg
