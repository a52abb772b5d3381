#include "odseg/convert.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "odseg/errors.hpp"
#include "odseg/log.hpp"

namespace odseg {

namespace fs = std::filesystem;

namespace {

constexpr char kNpyMagic[] = "\x93NUMPY";

std::string header_value(const std::string& header, const std::string& key, const fs::path& path) {
  const auto k = header.find("'" + key + "'");
  if (k == std::string::npos) throw FormatError(path.string() + ": npy header lacks '" + key + "'");
  auto v = header.find(':', k);
  if (v == std::string::npos) throw FormatError(path.string() + ": malformed npy header");
  ++v;
  while (v < header.size() && header[v] == ' ') ++v;
  if (v < header.size() && header[v] == '(') return header.substr(v + 1, header.find(')', v) - v - 1);
  const auto end = header.find_first_of(",}", v);
  std::string out = header.substr(v, end - v);
  out.erase(out.find_last_not_of(" ") + 1);
  if (out.size() >= 2 && out.front() == '\'' && out.back() == '\'') out = out.substr(1, out.size() - 2);
  return out;
}

}  // namespace

Tensor read_npy(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kNpyMagic, 6) != 0) {
    throw FormatError(path.string() + ": not an .npy file");
  }
  const std::uint8_t major = bytes[6];
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = bytes[8] | (bytes[9] << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw FormatError(path.string() + ": truncated npy header");
    header_len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (static_cast<std::size_t>(bytes[11]) << 24);
    offset = 12;
  } else {
    throw FormatError(path.string() + ": unsupported npy version " + std::to_string(major));
  }
  if (offset + header_len > bytes.size()) throw FormatError(path.string() + ": truncated npy header");
  const std::string header(bytes.begin() + offset, bytes.begin() + offset + header_len);
  const std::string descr = header_value(header, "descr", path);
  if (header_value(header, "fortran_order", path) != "False") {
    throw FormatError(path.string() + ": Fortran-order arrays are not supported");
  }
  Shape shape;
  std::stringstream dims(header_value(header, "shape", path));
  for (std::string d; std::getline(dims, d, ',');) {
    if (d.find_first_not_of(' ') == std::string::npos) continue;
    shape.push_back(std::stoul(d));
  }
  if (shape.empty()) throw FormatError(path.string() + ": scalar arrays are not supported");

  const std::size_t n = shape_size(shape);
  const std::uint8_t* data = bytes.data() + offset + header_len;
  const std::size_t available = bytes.size() - offset - header_len;
  Tensor t(shape);
  if (descr == "<f4") {
    if (available != n * 4) throw FormatError(path.string() + ": payload size does not match shape");
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(data[4 * i + b]) << (8 * b);
      std::memcpy(&t[i], &u, 4);
    }
  } else if (descr == "<f8") {
    if (available != n * 8) throw FormatError(path.string() + ": payload size does not match shape");
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(data[8 * i + b]) << (8 * b);
      double d;
      std::memcpy(&d, &u, 8);
      t[i] = static_cast<float>(d);
    }
  } else {
    throw FormatError(path.string() + ": unsupported dtype '" + descr + "' (need <f4 or <f8)");
  }
  return t;
}

void write_npy(const fs::path& path, const Tensor& tensor) {
  std::string shape;
  for (std::size_t d : tensor.shape()) shape += std::to_string(d) + ", ";
  if (tensor.rank() > 1) shape.erase(shape.size() - 1);  // keeps the 1-tuple comma
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + shape + "), }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::vector<std::uint8_t> out(kNpyMagic, kNpyMagic + 6);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  for (float v : tensor.values()) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
  }
  write_file_bytes(path, out);
}

Tensor oihw_to_hwio(const Tensor& k) {
  if (k.rank() != 4) throw ShapeError("oihw kernel must have rank 4, got " + shape_to_string(k.shape()));
  const std::size_t o = k.dim(0), i = k.dim(1), h = k.dim(2), w = k.dim(3);
  Tensor out({h, w, i, o});
  for (std::size_t a = 0; a < o; ++a)
    for (std::size_t b = 0; b < i; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[((y * w + x) * i + b) * o + a] = k[((a * i + b) * h + y) * w + x];
  return out;
}

std::vector<MappingEntry> parse_mapping(const std::string& text) {
  std::vector<MappingEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    MappingEntry e;
    std::string layout;
    if (!(fields >> e.external)) continue;
    if (!(fields >> e.internal)) {
      throw FormatError("mapping line " + std::to_string(lineno) + ": expected 'external internal [layout]'");
    }
    if (fields >> layout) {
      if (layout == "oihw") {
        e.layout = KernelLayout::kOihw;
      } else if (layout != "hwio") {
        throw FormatError("mapping line " + std::to_string(lineno) + ": unknown layout '" + layout + "'");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<MappingEntry> read_mapping(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mapping file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mapping(ss.str());
}

std::vector<NamedTensor> convert_weights(const fs::path& source, const std::vector<MappingEntry>& mapping) {
  if (!fs::exists(source)) throw IoError("weights source '" + source.string() + "' not found");
  std::map<std::string, Tensor> file_tensors;
  const bool from_dir = fs::is_directory(source);
  if (!from_dir) {
    for (NamedTensor& t : read_weight_file(source)) file_tensors.emplace(t.name, std::move(t.tensor));
  }
  auto fetch = [&](const std::string& name) -> Tensor {
    if (!from_dir) {
      auto it = file_tensors.find(name);
      if (it == file_tensors.end()) throw FormatError("source has no tensor '" + name + "'");
      return it->second;
    }
    std::string file;
    for (char c : name) {
      if (c == '/') {
        file += "__";
      } else if (c == ':') {
        file += '_';
      } else {
        file += c;
      }
    }
    const fs::path p = source / (file + ".npy");
    if (!fs::exists(p)) throw IoError("source has no tensor '" + name + "' (expected " + p.string() + ")");
    return read_npy(p);
  };

  std::vector<NamedTensor> out;
  for (const MappingEntry& e : mapping) {
    Tensor t = fetch(e.external);
    if (e.layout == KernelLayout::kOihw && t.rank() == 4) t = oihw_to_hwio(t);
    out.push_back({e.internal, std::move(t)});
  }
  if (!from_dir && file_tensors.size() > mapping.size()) {
    log_info("weights-convert: " + std::to_string(file_tensors.size() - mapping.size()) +
             " source tensors were not mapped");
  }
  return out;
}

}  // namespace odseg
