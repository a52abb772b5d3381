#include "odseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "odseg/errors.hpp"
#include "odseg/weight_file.hpp"

namespace odseg {

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

bool is_pgm(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2');
}

class PgmTokens {
 public:
  explicit PgmTokens(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  unsigned long next() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw FormatError("malformed PGM header");
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000'000ul) throw FormatError("PGM value out of range");
    }
    return v;
  }
  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG decode failed: ") + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = color ? 3 : 1;
  if (out.width == 0 || out.height == 0) {
    png_image_free(&img);
    throw FormatError("PNG has a zero dimension");
  }
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // A black background composes away any alpha channel.
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&img, &background, out.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG decode failed: ") + img.message);
  }
  return out;
}

Image8 decode_pgm(std::span<const std::uint8_t> bytes) {
  if (!is_pgm(bytes)) throw FormatError("not a PGM file");
  const bool binary = bytes[1] == '5';
  PgmTokens tokens(bytes);
  tokens.advance(2);
  Image8 out;
  out.width = tokens.next();
  out.height = tokens.next();
  const unsigned long maxval = tokens.next();
  out.channels = 1;
  if (out.width == 0 || out.height == 0) throw FormatError("PGM has a zero dimension");
  if (maxval == 0 || maxval > 65535) throw FormatError("PGM maxval out of range");
  const std::size_t count = out.width * out.height;
  out.pixels.resize(count);
  auto rescale = [maxval](unsigned long v) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::min(v, maxval) / static_cast<double>(maxval)));
  };
  if (binary) {
    tokens.advance(1);  // single whitespace after maxval
    const std::size_t sample = maxval > 255 ? 2 : 1;
    if (bytes.size() < tokens.pos() + count * sample) throw FormatError("PGM raster truncated");
    const std::uint8_t* p = bytes.data() + tokens.pos();
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned long v = sample == 2 ? (static_cast<unsigned long>(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
      out.pixels[i] = rescale(v);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) out.pixels[i] = rescale(tokens.next());
  }
  return out;
}

Image8 read_image(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  try {
    if (is_png(bytes)) return decode_png(bytes);
    if (is_pgm(bytes)) return decode_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  throw FormatError(path.string() + ": unsupported image format (expected PNG or PGM)");
}

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("PNG encode: 1 or 3 channels required");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw FormatError("PNG encode: pixel buffer size mismatch");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, image.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) { write_file_bytes(path, encode_png(image)); }

Tensor image_to_tensor(const Image8& image) {
  Tensor t({image.height, image.width, 3});
  const std::size_t n = image.width * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t v = image.channels == 1 ? image.pixels[i] : image.pixels[i * image.channels + c];
      t[i * 3 + c] = static_cast<float>(v) / 255.0f;
    }
  }
  return t;
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(2) != 1 && t.dim(2) != 3)) {
    throw ShapeError("tensor_to_image expects [H,W,1] or [H,W,3], got " + shape_to_string(t.shape()));
  }
  Image8 img{t.dim(1), t.dim(0), t.dim(2), std::vector<std::uint8_t>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0f, 1.0f) * 255.0f));
  }
  return img;
}

Image8 mask_to_image(const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(2) != 1) throw ShapeError("mask_to_image expects [H,W,1]");
  Image8 img{mask.dim(1), mask.dim(0), 1, std::vector<std::uint8_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] > 0.5f ? 255 : 0;
  return img;
}

}  // namespace odseg
