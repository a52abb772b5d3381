#include "odseg/weight_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "odseg/errors.hpp"

namespace odseg {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("weight file truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(std::span<const NamedTensor> tensors) {
  if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("too many tensors");
  Writer w;
  w.bytes(kWeightMagic, 4);
  w.u16(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    if (nt.name.empty() || nt.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name length out of range: '" + nt.name + "'");
    }
    const Shape& shape = nt.tensor.shape();
    if (shape.empty() || shape.size() > 255) throw FormatError("tensor rank out of range for " + nt.name);
    w.u16(static_cast<std::uint16_t>(nt.name.size()));
    w.bytes(nt.name.data(), nt.name.size());
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension too large in " + nt.name);
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (float f : nt.tensor.values()) w.f32(f);
  }
  return w.take();
}

std::vector<NamedTensor> decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    throw FormatError("not a weight file (bad magic)");
  }
  r.str(4);
  const std::uint16_t version = r.u16();
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const std::uint16_t name_len = r.u16();
    if (name_len == 0) throw FormatError("empty tensor name in weight file");
    nt.name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    if (rank == 0) throw FormatError("zero-rank tensor '" + nt.name + "' in weight file");
    Shape shape(rank);
    std::size_t elements = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw FormatError("zero dimension in tensor '" + nt.name + "'");
      elements *= d;
    }
    r.need(elements * 4);
    std::vector<float> values(elements);
    for (float& f : values) f = r.f32();
    nt.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last tensor record");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) throw IoError("'" + path.string() + "' is a directory");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write error on '" + path.string() + "'");
}

void write_weight_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  write_file_bytes(path, encode_weights(tensors));
}

std::vector<NamedTensor> read_weight_file(const std::filesystem::path& path) {
  return decode_weights(read_file_bytes(path));
}

}  // namespace odseg
