#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "odseg/tensor.hpp"
#include "odseg/weight_file.hpp"

namespace odseg {

/// Reads a little-endian float32 or float64 C-order .npy array.
Tensor read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const Tensor& tensor);

enum class KernelLayout {
  kHwio,  // [kh, kw, c_in, c_out]; stored as-is
  kOihw,  // [c_out, c_in, kh, kw]; transposed on import
};

struct MappingEntry {
  std::string external;
  std::string internal;
  KernelLayout layout = KernelLayout::kHwio;
};

/// Lines "external<TAB or spaces>internal[ oihw|hwio]"; '#' comments.
std::vector<MappingEntry> parse_mapping(const std::string& text);
std::vector<MappingEntry> read_mapping(const std::filesystem::path& path);

/// Source tensors come from either a weight file or a directory of
/// "<external name>.npy" files, where '/' in a name is written as "__"
/// and ':' as "_". Every mapped name must exist in the source.
std::vector<NamedTensor> convert_weights(const std::filesystem::path& source,
                                         const std::vector<MappingEntry>& mapping);

Tensor oihw_to_hwio(const Tensor& kernel);

}  // namespace odseg
