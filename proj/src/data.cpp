#include "odseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "odseg/errors.hpp"
#include "odseg/image_io.hpp"

namespace odseg {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \r\n");
  return s.substr(b, e - b + 1);
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

void require_image_tensor(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [H,W,C], got " + shape_to_string(t.shape()));
}

// Within this distance of an integer, a sampling coordinate is treated as
// exactly that integer (keeps quarter-turn rotations lossless).
constexpr double kSnap = 1e-6;

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < kSnap ? r : v;
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& text, const fs::path& base_dir) {
  std::vector<ManifestRecord> records;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split(t, '\t');
    if (fields.size() != 3) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    ManifestRecord r;
    r.image = resolve(fields[0], base_dir);
    for (const std::string& m : split(fields[1], ';')) {
      if (trim(m).empty()) throw FormatError("manifest line " + std::to_string(line_no) + ": empty mask path");
      r.masks.push_back(resolve(trim(m), base_dir));
    }
    if (r.masks.empty()) throw FormatError("manifest line " + std::to_string(line_no) + ": no mask path");
    const std::string tag = trim(fields[2]);
    if (tag == "train") {
      r.split = SplitTag::kTrain;
    } else if (tag == "test") {
      r.split = SplitTag::kTest;
    } else {
      throw FormatError("manifest line " + std::to_string(line_no) + ": split must be train or test, got '" + tag +
                        "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

void write_manifest(const fs::path& path, std::span<const ManifestRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.is_absolute() ? p.lexically_relative(base) : p; };
  for (const ManifestRecord& r : records) {
    out << rel(r.image).generic_string() << '\t';
    for (std::size_t i = 0; i < r.masks.size(); ++i) {
      if (i) out << ';';
      out << rel(r.masks[i]).generic_string();
    }
    out << '\t' << (r.split == SplitTag::kTrain ? "train" : "test") << '\n';
  }
  if (!out) throw IoError("write error on manifest '" + path.string() + "'");
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  require_image_tensor(image, "resize_bilinear");
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  if (ih == height && iw == width) return image;
  Tensor out({height, width, c});
  const double sy = static_cast<double>(ih) / static_cast<double>(height);
  const double sx = static_cast<double>(iw) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(ih - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(iw - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v00 = image[(y0 * iw + x0) * c + ch], v01 = image[(y0 * iw + x1) * c + ch];
        const double v10 = image[(y1 * iw + x0) * c + ch], v11 = image[(y1 * iw + x1) * c + ch];
        const double top = v00 + (v01 - v00) * wx;
        const double bottom = v10 + (v11 - v10) * wx;
        out[(y * width + x) * c + ch] = static_cast<float>(top + (bottom - top) * wy);
      }
    }
  }
  return out;
}

Tensor resize_nearest(const Tensor& image, std::size_t height, std::size_t width) {
  require_image_tensor(image, "resize_nearest");
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  if (ih == height && iw == width) return image;
  Tensor out({height, width, c});
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t src_y = std::min(ih - 1, static_cast<std::size_t>((y + 0.5) * ih / static_cast<double>(height)));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t src_x =
          std::min(iw - 1, static_cast<std::size_t>((x + 0.5) * iw / static_cast<double>(width)));
      std::copy_n(image.data() + (src_y * iw + src_x) * c, c, out.data() + (y * width + x) * c);
    }
  }
  return out;
}

Tensor threshold_mask(const Tensor& gray01) {
  require_image_tensor(gray01, "threshold_mask");
  const std::size_t h = gray01.dim(0), w = gray01.dim(1), c = gray01.dim(2);
  Tensor out({h, w, 1});
  for (std::size_t i = 0; i < h * w; ++i) {
    // First channel only; gray images are replicated across channels.
    const long v = std::lround(gray01[i * c] * 255.0f);
    out[i] = v > 127 ? 1.0f : 0.0f;
  }
  return out;
}

Tensor merge_annotations(std::span<const Tensor> masks) {
  if (masks.empty()) throw ParameterError("merge_annotations: at least one mask is required");
  for (const Tensor& m : masks) require_same_shape(masks.front(), m, "merge_annotations");
  Tensor out(masks.front().shape());
  const double n = static_cast<double>(masks.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const Tensor& m : masks) acc += m[i];
    out[i] = acc / n >= 0.5 ? 1.0f : 0.0f;
  }
  return out;
}

Sample load_sample(const ManifestRecord& record, const PreprocessOptions& options) {
  Sample s;
  s.source_id = record.image.stem().string();
  const Image8 raw = read_image(record.image);
  s.image = resize_bilinear(image_to_tensor(raw), options.height, options.width);

  std::vector<Tensor> masks;
  for (const fs::path& mp : record.masks) {
    Tensor m = threshold_mask(image_to_tensor(read_image(mp)));
    if (m.dim(0) != raw.height || m.dim(1) != raw.width) {
      throw ShapeError("mask '" + mp.string() + "' does not match the size of image '" + record.image.string() + "'");
    }
    masks.push_back(std::move(m));
    s.annotators.push_back(mp.stem().string());
  }
  s.mask = resize_nearest(merge_annotations(masks), options.height, options.width);
  return s;
}

Dataset load_and_preprocess(std::span<const ManifestRecord> records, const PreprocessOptions& options) {
  if (options.height == 0 || options.width == 0) throw ParameterError("preprocess target size must be positive");
  Dataset out;
  out.reserve(records.size());
  for (const ManifestRecord& r : records) out.push_back(load_sample(r, options));
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  CounterRng rng(seed, 0x5B117);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

DatasetSplit split_dataset(std::size_t n, double train_fraction, double val_fraction_of_train, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0) || !(val_fraction_of_train > 0.0 && val_fraction_of_train < 1.0)) {
    throw ParameterError("split fractions must lie in (0,1)");
  }
  const auto train_total = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
  const auto val = static_cast<std::size_t>(std::floor(static_cast<double>(train_total) * val_fraction_of_train + 1e-9));
  const std::size_t test = n - train_total;
  if (val == 0 || train_total - val == 0 || test == 0) {
    throw ParameterError("split_dataset: " + std::to_string(n) + " records are too few to populate train/val/test");
  }
  const std::vector<std::size_t> perm = seeded_permutation(n, seed);
  DatasetSplit s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(train_total - val));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(train_total - val),
               perm.begin() + static_cast<std::ptrdiff_t>(train_total));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(train_total), perm.end());
  return s;
}

void AugmentationConfig::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) throw ParameterError("augmentation probability must lie in [0,1]");
  if (!(shift_fraction >= 0.0 && shift_fraction <= 0.5)) throw ParameterError("shift fraction must lie in [0,0.5]");
  if (!(max_rotation_degrees >= 0.0 && max_rotation_degrees <= 360.0)) {
    throw ParameterError("rotation range must lie in [0,360]");
  }
}

AugmentParams sample_augmentation(const AugmentationConfig& config, CounterRng& rng, std::size_t height,
                                  std::size_t width) {
  config.validate();
  AugmentParams p;
  // Every draw is consumed regardless of the flags so that toggling one
  // transform does not reshuffle the others.
  const bool do_hshift = rng.bernoulli(config.probability);
  const double hshift = rng.uniform(-config.shift_fraction, config.shift_fraction);
  const bool do_vshift = rng.bernoulli(config.probability);
  const double vshift = rng.uniform(-config.shift_fraction, config.shift_fraction);
  const bool do_rot = rng.bernoulli(config.probability);
  const double angle = rng.uniform(0.0, config.max_rotation_degrees);
  const bool do_hflip = rng.bernoulli(config.probability);
  const bool do_vflip = rng.bernoulli(config.probability);

  if (config.horizontal_shift && do_hshift) p.shift_x = std::lround(hshift * static_cast<double>(width));
  if (config.vertical_shift && do_vshift) p.shift_y = std::lround(vshift * static_cast<double>(height));
  if (config.rotation && do_rot) p.rotation_degrees = angle;
  p.flip_horizontal = config.horizontal_flip && do_hflip;
  p.flip_vertical = config.vertical_flip && do_vflip;
  return p;
}

Sample apply_augmentation(const Sample& sample, const AugmentParams& params) {
  require_image_tensor(sample.image, "augment");
  require_image_tensor(sample.mask, "augment");
  const std::size_t h = sample.image.dim(0), w = sample.image.dim(1), c = sample.image.dim(2);
  if (sample.mask.dim(0) != h || sample.mask.dim(1) != w) throw ShapeError("augment: image/mask size mismatch");

  Sample out = sample;
  out.image.fill(0.0f);
  out.mask.fill(0.0f);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double theta = params.rotation_degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const auto wi = static_cast<long>(w), hi = static_cast<long>(h);

  auto source_pixel = [&](long y, long x, std::size_t ch) -> double {
    if (x < 0 || y < 0 || x >= wi || y >= hi) return 0.0;
    return sample.image[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + ch];
  };

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map: undo shift, undo rotation, undo flip.
      const double px = static_cast<double>(x) - static_cast<double>(params.shift_x) - cx;
      const double py = static_cast<double>(y) - static_cast<double>(params.shift_y) - cy;
      double sx = snap(cos_t * px + sin_t * py + cx);
      double sy = snap(-sin_t * px + cos_t * py + cy);
      if (params.flip_horizontal) sx = static_cast<double>(w) - 1.0 - sx;
      if (params.flip_vertical) sy = static_cast<double>(h) - 1.0 - sy;

      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = source_pixel(y0, x0, ch) * (1.0 - ax) * (1.0 - ay);
        if (ax > 0.0) v += source_pixel(y0, x0 + 1, ch) * ax * (1.0 - ay);
        if (ay > 0.0) v += source_pixel(y0 + 1, x0, ch) * (1.0 - ax) * ay;
        if (ax > 0.0 && ay > 0.0) v += source_pixel(y0 + 1, x0 + 1, ch) * ax * ay;
        out.image[(y * w + x) * c + ch] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      }
      const long nx = std::lround(sx), ny = std::lround(sy);
      if (nx >= 0 && ny >= 0 && nx < wi && ny < hi) {
        const float m = sample.mask[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)];
        out.mask[y * w + x] = m > 0.5f ? 1.0f : 0.0f;
      }
    }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentationConfig& config, CounterRng& rng) {
  return apply_augmentation(sample, sample_augmentation(config, rng, sample.image.dim(0), sample.image.dim(1)));
}

double foreground_fraction(const Tensor& mask) { return sum(mask) / static_cast<double>(mask.size()); }

namespace {

struct Ellipse {
  double cx, cy, rx, ry, angle;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

void blend(Tensor& image, std::size_t size, std::size_t y, std::size_t x, const double rgb[3], double alpha) {
  for (std::size_t c = 0; c < 3; ++c) {
    float& v = image[(y * size + x) * 3 + c];
    v = static_cast<float>(v * (1.0 - alpha) + rgb[c] * alpha);
  }
}

Sample make_synthetic(std::size_t size, std::uint64_t seed, std::size_t index) {
  CounterRng rng(seed, index + 1);
  const double s = static_cast<double>(size);
  const double scale = s / 64.0;
  Tensor image({size, size, 3});
  Tensor mask({size, size, 1});

  // Disc geometry first: everything else is placed around it.
  Ellipse disc{};
  std::size_t disc_pixels = 0;
  for (;;) {
    const double fraction = rng.uniform(0.03, 0.08);
    const double aspect = rng.uniform(0.85, 1.15);
    const double r = std::sqrt(fraction * s * s / std::numbers::pi);
    disc.rx = r * std::sqrt(aspect);
    disc.ry = r / std::sqrt(aspect);
    disc.angle = rng.uniform(0.0, std::numbers::pi);
    const double margin = std::max(disc.rx, disc.ry) + 2.0 * scale;
    disc.cx = rng.uniform(margin, s - 1.0 - margin);
    disc.cy = rng.uniform(margin, s - 1.0 - margin);
    mask.fill(0.0f);
    disc_pixels = 0;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        if (disc.contains(static_cast<double>(x), static_cast<double>(y))) {
          mask[y * size + x] = 1.0f;
          ++disc_pixels;
        }
      }
    }
    const double f = static_cast<double>(disc_pixels) / (s * s);
    if (f >= kMinDiscFraction && f <= kMaxDiscFraction) break;
  }

  // Background: orange-red retina with smooth texture, pixel noise and a
  // radial vignette.
  const double base[3] = {rng.uniform(0.55, 0.68), rng.uniform(0.22, 0.32), rng.uniform(0.08, 0.15)};
  double waves[3][4];
  for (auto& wv : waves) {
    wv[0] = rng.uniform(0.5, 2.5) * 2.0 * std::numbers::pi / s;  // frequency
    wv[1] = rng.uniform(0.0, std::numbers::pi);                    // direction
    wv[2] = rng.uniform(0.0, 2.0 * std::numbers::pi);              // phase
    wv[3] = rng.uniform(0.02, 0.05);                               // amplitude
  }
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double tex = 0.0;
      for (const auto& wv : waves) {
        tex += wv[3] * std::sin(wv[0] * (std::cos(wv[1]) * x + std::sin(wv[1]) * y) + wv[2]);
      }
      const double dx = (x - s / 2.0) / (s / 2.0), dy = (y - s / 2.0) / (s / 2.0);
      const double vignette = 1.0 - 0.35 * std::min(1.5, dx * dx + dy * dy);
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-0.02, 0.02);
        image[(y * size + x) * 3 + c] = static_cast<float>(std::clamp((base[c] + tex) * vignette + noise, 0.0, 1.0));
      }
    }
  }

  // Vessels: dark curves radiating from the disc, drawn outside it.
  const int vessels = 4 + static_cast<int>(rng.below(3));
  const double vessel_rgb[3] = {0.30, 0.06, 0.04};
  for (int v = 0; v < vessels; ++v) {
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double bend = rng.uniform(-1.2, 1.2);
    const double length = rng.uniform(0.5, 0.9) * s;
    const double radius = rng.uniform(0.5, 1.0) * scale;
    for (double t = 0.0; t <= 1.0; t += 0.25 / length) {
      const double a = dir + bend * t;
      const double px = disc.cx + t * length * std::cos(a);
      const double py = disc.cy + t * length * std::sin(a);
      const auto r = static_cast<long>(std::ceil(radius));
      for (long oy = -r; oy <= r; ++oy) {
        for (long ox = -r; ox <= r; ++ox) {
          const long xx = std::lround(px) + ox, yy = std::lround(py) + oy;
          if (xx < 0 || yy < 0 || xx >= static_cast<long>(size) || yy >= static_cast<long>(size)) continue;
          const double d = std::hypot(xx - px, yy - py);
          if (d > radius) continue;
          const auto ux = static_cast<std::size_t>(xx), uy = static_cast<std::size_t>(yy);
          if (mask[uy * size + ux] > 0.5f) continue;
          blend(image, size, uy, ux, vessel_rgb, 0.35);
        }
      }
    }
  }

  // Distractors: small whitish blobs kept clear of the disc.
  const int blobs = 1 + static_cast<int>(rng.below(3));
  const double disc_extent = std::max(disc.rx, disc.ry);
  for (int b = 0; b < blobs; ++b) {
    const double radius = rng.uniform(0.02, 0.04) * s;
    double bx = 0.0, by = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      bx = rng.uniform(radius + 1.0, s - 2.0 - radius);
      by = rng.uniform(radius + 1.0, s - 2.0 - radius);
      placed = std::hypot(bx - disc.cx, by - disc.cy) > disc_extent + radius + 3.0 * scale;
    }
    if (!placed) continue;
    const double rgb[3] = {rng.uniform(0.88, 0.95), rng.uniform(0.86, 0.93), rng.uniform(0.78, 0.88)};
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double d = std::hypot(x - bx, y - by);
        if (d > radius + 1.0) continue;
        const double alpha = std::clamp(radius + 0.5 - d, 0.0, 1.0) * 0.9;
        if (alpha > 0.0) blend(image, size, y, x, rgb, alpha);
      }
    }
  }

  // The disc itself: bright yellow with a brighter cup, hard edge on the
  // mask boundary.
  const double intensity = rng.uniform(0.85, 1.0);
  const double disc_rgb[3] = {1.0 * intensity, 0.82 * intensity, 0.45 * intensity};
  const double cup_rgb[3] = {1.0, 0.95, 0.75};
  const double cup = rng.uniform(0.3, 0.5);
  const Ellipse cup_shape{disc.cx, disc.cy, disc.rx * cup, disc.ry * cup, disc.angle};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      if (mask[y * size + x] < 0.5f) continue;
      blend(image, size, y, x, disc_rgb, 1.0);
      if (cup_shape.contains(static_cast<double>(x), static_cast<double>(y))) blend(image, size, y, x, cup_rgb, 0.6);
      for (std::size_t c = 0; c < 3; ++c) {
        float& v = image[(y * size + x) * 3 + c];
        v = std::clamp(static_cast<float>(v + rng.uniform(-0.02, 0.02)), 0.0f, 1.0f);
      }
    }
  }

  Sample out;
  out.image = std::move(image);
  out.mask = std::move(mask);
  char id[32];
  std::snprintf(id, sizeof id, "synth_%04zu", index);
  out.source_id = id;
  out.annotators = {"generator"};
  return out;
}

}  // namespace

Dataset generate_synthetic(const SyntheticOptions& options) {
  if (options.count == 0) throw ParameterError("synthetic dataset needs at least one sample");
  if (options.size == 0 || options.size % 32 != 0) throw ParameterError("synthetic image size must be a multiple of 32");
  Dataset out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) out.push_back(make_synthetic(options.size, options.seed, i));
  return out;
}

fs::path write_dataset(const Dataset& dataset, const fs::path& out_dir, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ParameterError("train fraction must lie in (0,1]");
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  const std::size_t n = dataset.size();
  std::size_t test = n - static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
  if (train_fraction < 1.0 && n >= 2 && test == 0) test = 1;
  const std::vector<std::size_t> perm = seeded_permutation(n, seed);
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < test; ++i) is_test[perm[i]] = true;

  std::vector<ManifestRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = dataset[i];
    const fs::path image = fs::path("images") / (s.source_id + ".png");
    const fs::path mask = fs::path("masks") / (s.source_id + ".png");
    write_png(out_dir / image, tensor_to_image(s.image));
    write_png(out_dir / mask, mask_to_image(s.mask));
    records.push_back({image, {mask}, is_test[i] ? SplitTag::kTest : SplitTag::kTrain});
  }
  const fs::path manifest = out_dir / "manifest.tsv";
  write_manifest(manifest, records);
  return manifest;
}

std::pair<Tensor, Tensor> make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<Tensor> images, masks;
  images.reserve(indices.size());
  masks.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= dataset.size()) throw ParameterError("make_batch: index out of range");
    images.push_back(dataset[i].image);
    masks.push_back(dataset[i].mask);
  }
  return {stack(images), stack(masks)};
}

}  // namespace odseg
