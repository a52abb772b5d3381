#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "odseg/rng.hpp"
#include "odseg/tensor.hpp"

namespace odseg {

struct Sample {
  Tensor image;  // [H,W,3] in [0,1]
  Tensor mask;   // [H,W,1] in {0,1}
  std::string source_id;
  std::vector<std::string> annotators;
};

using Dataset = std::vector<Sample>;

enum class SplitTag { kTrain, kTest };

struct ManifestRecord {
  std::filesystem::path image;
  std::vector<std::filesystem::path> masks;
  SplitTag split = SplitTag::kTrain;
};

/// Line format: image-path TAB mask-path[;mask-path...] TAB train|test.
/// Blank lines and lines starting with '#' are ignored. Relative paths are
/// resolved against the manifest's directory.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);
std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::filesystem::path& base_dir);

/// Half-pixel-centre bilinear resize of an [H,W,C] tensor. Same-size resize
/// returns the input unchanged.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor resize_nearest(const Tensor& image, std::size_t height, std::size_t width);

/// Gray 8-bit values > 127 become 1, everything else 0; result [H,W,1].
Tensor threshold_mask(const Tensor& gray01);

/// Pixel-wise mean of binary masks, then >= 0.5 -> 1.
Tensor merge_annotations(std::span<const Tensor> masks);

struct PreprocessOptions {
  std::size_t height = 224;
  std::size_t width = 224;
};

/// Loads every record: images bilinear-resized and scaled to [0,1]; masks
/// thresholded and merged at native resolution, then nearest-resized.
Dataset load_and_preprocess(std::span<const ManifestRecord> records, const PreprocessOptions& options = {});
Sample load_sample(const ManifestRecord& record, const PreprocessOptions& options = {});

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of [0, n); test gets n - floor(n * train_fraction), val
/// gets floor(train * val_fraction_of_train). Throws ParameterError when a
/// part would be empty.
DatasetSplit split_dataset(std::size_t n, double train_fraction = 0.75, double val_fraction_of_train = 0.10,
                           std::uint64_t seed = 0);

/// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

struct AugmentationConfig {
  double probability = 0.5;  // per transform
  double shift_fraction = 0.10;
  double max_rotation_degrees = 360.0;
  bool horizontal_shift = true;
  bool vertical_shift = true;
  bool rotation = true;
  bool horizontal_flip = true;
  bool vertical_flip = true;

  void validate() const;
};

/// Concrete transform: flip, then rotate about the image centre, then shift
/// by whole pixels.
struct AugmentParams {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double rotation_degrees = 0.0;
  long shift_x = 0;
  long shift_y = 0;
};

AugmentParams sample_augmentation(const AugmentationConfig& config, CounterRng& rng, std::size_t height,
                                  std::size_t width);
/// Image bilinear, mask nearest; both zero-filled outside the source.
Sample apply_augmentation(const Sample& sample, const AugmentParams& params);
Sample augment(const Sample& sample, const AugmentationConfig& config, CounterRng& rng);

struct SyntheticOptions {
  std::size_t count = 16;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

inline constexpr double kMinDiscFraction = 0.02;
inline constexpr double kMaxDiscFraction = 0.10;

/// Fundus-like images: one bright elliptical disc (the mask), smaller
/// whitish distractor blobs that never touch it, dark vessel curves and a
/// textured vignetted background.
Dataset generate_synthetic(const SyntheticOptions& options);

/// Writes images/NNNN.png, masks/NNNN.png and manifest.tsv (a quarter of
/// the samples tagged test). Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& out_dir,
                                    double train_fraction, std::uint64_t seed);

/// Stacks samples[indices] into [B,H,W,3] images and [B,H,W,1] masks.
std::pair<Tensor, Tensor> make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

double foreground_fraction(const Tensor& mask);

}  // namespace odseg
