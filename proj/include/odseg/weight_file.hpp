#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "odseg/tensor.hpp"

namespace odseg {

// Binary layout (all integers and floats little-endian):
//   "ODSW" | version u16 | count u32 |
//   count x { name_len u16 | name | rank u8 | dims u32[rank] | f32[prod(dims)] }
inline constexpr char kWeightMagic[4] = {'O', 'D', 'S', 'W'};
inline constexpr std::uint16_t kWeightFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_weights(std::span<const NamedTensor> tensors);
/// Throws FormatError on bad magic, unsupported version, truncation or
/// trailing bytes.
std::vector<NamedTensor> decode_weights(std::span<const std::uint8_t> bytes);

void write_weight_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_weight_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace odseg
