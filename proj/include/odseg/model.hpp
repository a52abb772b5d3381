#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odseg/layers.hpp"
#include "odseg/tensor.hpp"
#include "odseg/weight_file.hpp"

namespace odseg {

struct ModelConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  /// Scales every channel count; 1.0 is the reference network.
  double width_multiplier = 1.0;
  std::uint64_t seed = 0;
  /// Encoder initialisation stddev; later layers use He scaling.
  float init_stddev = 0.05f;
  /// He scaling in the encoder too. Narrow models otherwise shrink
  /// activations by roughly 0.05 * sqrt(fan_in / 2) per layer.
  bool he_encoder_init = false;
};

enum class LayerKind { kConv, kMaxPool, kUpsample, kConcat, kRelu, kSigmoid };

/// One entry of the ordered topology listing.
struct LayerDescriptor {
  LayerKind kind;
  std::string name;
  std::size_t channels = 0;   // output channels
  std::string skip_source;    // for kConcat: the encoder activation joined in
};

enum class ConvRole { kEncoder, kCenter, kDecoder, kHead };

struct ConvLayer {
  std::string name;  // e.g. enc3_conv2, center_conv, dec2_conv, head_conv
  ConvRole role;
  ConvParams params;
};

struct ParamGrads {
  Tensor kernels;
  Tensor biases;
};
/// Aligned with Model::layers().
using GradientStore = std::vector<ParamGrads>;

struct ForwardPass {
  Tensor output;  // [B,H,W,1] probabilities
  std::vector<ConvCache> conv;
  std::vector<Tensor> pre_activation;  // conv outputs before ReLU/sigmoid
  std::array<PoolCache, 5> pool;
  std::array<std::size_t, 5> decoder_up_channels{};
};

/// VGG16 encoder, one centre convolution in place of the dense head, and a
/// five-stage upsampling decoder with skip concatenations from encoder
/// blocks 4..1 into decoder stages 2..5, ending in a 1x1 conv and sigmoid.
class Model {
 public:
  static constexpr std::size_t kStages = 5;
  static constexpr std::array<std::size_t, 5> kEncoderChannels = {64, 128, 256, 512, 512};
  static constexpr std::array<std::size_t, 5> kEncoderDepth = {2, 2, 3, 3, 3};
  static constexpr std::size_t kCenterChannels = 512;
  static constexpr std::array<std::size_t, 5> kDecoderChannels = {512, 256, 128, 64, 32};

  /// Throws ShapeError unless height and width are positive multiples of 32.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
  std::vector<ConvLayer>& layers() noexcept { return layers_; }
  const std::vector<LayerDescriptor>& topology() const noexcept { return topology_; }

  std::size_t parameter_count() const;
  std::size_t encoder_parameter_count() const;

  /// Batch [B,H,W,3] -> probabilities [B,H,W,1].
  Tensor predict(const Tensor& batch) const;
  ForwardPass forward(const Tensor& batch) const;
  /// `loss_grad` is dLoss/dprediction with the shape of pass.output.
  GradientStore backward(const ForwardPass& pass, const Tensor& loss_grad) const;

  /// Tensor names are "<layer>.kernel" / "<layer>.bias".
  std::vector<NamedTensor> named_parameters() const;
  Tensor* find_parameter(const std::string& name);

  /// Flat views for the optimizer, kernels then bias per layer.
  std::vector<Tensor*> parameter_tensors();
  static std::vector<const Tensor*> gradient_tensors(const GradientStore& grads);

  std::size_t scaled(std::size_t channels) const;

 private:
  Tensor run(const Tensor& batch, ForwardPass* pass) const;
  void add_conv(std::string name, ConvRole role, std::size_t in, std::size_t out, std::size_t k, std::uint64_t seed);

  ModelConfig config_;
  std::vector<ConvLayer> layers_;
  std::vector<LayerDescriptor> topology_;
};

Model build_model(std::size_t height, std::size_t width, double width_multiplier, std::uint64_t seed = 0);

/// Sum over conv layers of (k*k*c_in + 1) * c_out.
std::size_t count_parameters(const Model& model);

/// Reference figures logged next to the derived parameter count: the
/// original VGG16 classifier, and the customised network as published.
inline constexpr std::size_t kVgg16ClassifierParameters = 134'327'060;
inline constexpr std::size_t kReportedCustomParameters = 16'882'452;

enum class LoadMode {
  kStrict,   // unknown names or shape mismatches are errors
  kLenient,  // unknown names and mismatched shapes are skipped
};

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;
};

void save_weights(const Model& model, const std::filesystem::path& path);
/// Tensors absent from the file keep their current values, which is how an
/// encoder-only file initialises the encoder of a fresh model.
LoadReport load_weights(Model& model, const std::filesystem::path& path, LoadMode mode = LoadMode::kStrict);
LoadReport apply_weights(Model& model, const std::vector<NamedTensor>& tensors, LoadMode mode);

/// Encoder-only subset of the parameters (transfer-learning payload).
std::vector<NamedTensor> encoder_parameters(const Model& model);

}  // namespace odseg
