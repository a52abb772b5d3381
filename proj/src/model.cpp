#include "odseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "odseg/errors.hpp"
#include "odseg/rng.hpp"

namespace odseg {

namespace {

std::string encoder_name(std::size_t block, std::size_t conv) {
  return "enc" + std::to_string(block + 1) + "_conv" + std::to_string(conv + 1);
}

std::string decoder_name(std::size_t stage) { return "dec" + std::to_string(stage + 1) + "_conv"; }

// Encoder block whose pre-pool activation is concatenated into decoder stage
// `stage` (0-based, 0 = deepest). The deepest stage has no skip.
constexpr int skip_block_for_stage(std::size_t stage) { return stage == 0 ? -1 : static_cast<int>(4 - stage); }

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  if (config_.height == 0 || config_.width == 0 || config_.height % 32 != 0 || config_.width % 32 != 0) {
    throw ShapeError("model input size must be a positive multiple of 32, got " + std::to_string(config_.height) +
                     "x" + std::to_string(config_.width));
  }
  if (!(config_.width_multiplier > 0.0 && config_.width_multiplier <= 1.0)) {
    throw ParameterError("width multiplier must lie in (0, 1]");
  }
  if (!(config_.init_stddev > 0.0f)) throw ParameterError("init stddev must be > 0");

  std::uint64_t layer_seed = 0;
  std::size_t channels = 3;
  std::array<std::size_t, kStages> skip_channels{};
  for (std::size_t b = 0; b < kStages; ++b) {
    const std::size_t out = scaled(kEncoderChannels[b]);
    for (std::size_t c = 0; c < kEncoderDepth[b]; ++c) {
      add_conv(encoder_name(b, c), ConvRole::kEncoder, channels, out, 3, layer_seed++);
      channels = out;
      topology_.push_back({LayerKind::kRelu, encoder_name(b, c) + "_relu", out, {}});
    }
    skip_channels[b] = channels;
    topology_.push_back({LayerKind::kMaxPool, "pool" + std::to_string(b + 1), channels, {}});
  }

  add_conv("center_conv", ConvRole::kCenter, channels, scaled(kCenterChannels), 3, layer_seed++);
  channels = scaled(kCenterChannels);
  topology_.push_back({LayerKind::kRelu, "center_relu", channels, {}});

  for (std::size_t s = 0; s < kStages; ++s) {
    topology_.push_back({LayerKind::kUpsample, "up" + std::to_string(s + 1), channels, {}});
    const int skip = skip_block_for_stage(s);
    if (skip >= 0) {
      channels += skip_channels[static_cast<std::size_t>(skip)];
      topology_.push_back({LayerKind::kConcat, "skip" + std::to_string(s + 1), channels,
                           encoder_name(static_cast<std::size_t>(skip), kEncoderDepth[skip] - 1) + "_relu"});
    }
    const std::size_t out = scaled(kDecoderChannels[s]);
    add_conv(decoder_name(s), ConvRole::kDecoder, channels, out, 3, layer_seed++);
    channels = out;
    topology_.push_back({LayerKind::kRelu, decoder_name(s) + "_relu", out, {}});
  }

  add_conv("head_conv", ConvRole::kHead, channels, 1, 1, layer_seed++);
  topology_.push_back({LayerKind::kSigmoid, "head_sigmoid", 1, {}});
}

std::size_t Model::scaled(std::size_t channels) const {
  const auto c = static_cast<std::size_t>(std::lround(static_cast<double>(channels) * config_.width_multiplier));
  return std::max<std::size_t>(1, c);
}

void Model::add_conv(std::string name, ConvRole role, std::size_t in, std::size_t out, std::size_t k,
                     std::uint64_t seed) {
  // Encoder: fixed-stddev Gaussian (stands in for imported weights).
  // Everything after it: He-scaled Gaussian so the decoder neither explodes
  // nor vanishes at full width.
  const float stddev = role == ConvRole::kEncoder && !config_.he_encoder_init
                           ? config_.init_stddev
                           : static_cast<float>(std::sqrt(2.0 / static_cast<double>(k * k * in)));
  ConvParams params{gaussian_init({k, k, in, out}, 0.0f, stddev, derive_seed(config_.seed, seed)),
                    Tensor::zeros({out})};
  topology_.push_back({LayerKind::kConv, name, out, {}});
  layers_.push_back({std::move(name), role, std::move(params)});
}

std::size_t Model::parameter_count() const { return count_parameters(*this); }

std::size_t Model::encoder_parameter_count() const {
  std::size_t n = 0;
  for (const ConvLayer& l : layers_) {
    if (l.role == ConvRole::kEncoder) n += l.params.kernels.size() + l.params.biases.size();
  }
  return n;
}

std::size_t count_parameters(const Model& model) {
  std::size_t n = 0;
  for (const ConvLayer& l : model.layers()) {
    const std::size_t k = l.params.kernel_size();
    n += (k * k * l.params.in_channels() + 1) * l.params.out_channels();
  }
  return n;
}

Tensor Model::run(const Tensor& batch, ForwardPass* pass) const {
  if (batch.rank() != 4 || batch.dim(1) != config_.height || batch.dim(2) != config_.width || batch.dim(3) != 3) {
    throw ShapeError("model expects [B," + std::to_string(config_.height) + "," + std::to_string(config_.width) +
                     ",3], got " + shape_to_string(batch.shape()));
  }
  if (pass) {
    pass->conv.assign(layers_.size(), {});
    pass->pre_activation.assign(layers_.size(), {});
  }
  std::size_t li = 0;
  auto conv_relu = [&](const Tensor& x) {
    Tensor z = conv2d_forward(x, layers_[li].params, pass ? &pass->conv[li] : nullptr);
    Tensor a = relu_forward(z);
    if (pass) pass->pre_activation[li] = std::move(z);
    ++li;
    return a;
  };

  Tensor x = batch;
  std::array<Tensor, kStages> skips;
  for (std::size_t b = 0; b < kStages; ++b) {
    for (std::size_t c = 0; c < kEncoderDepth[b]; ++c) x = conv_relu(x);
    if (b + 1 < kStages) skips[b] = x;
    x = maxpool2_forward(x, pass ? &pass->pool[b] : nullptr);
  }
  x = conv_relu(x);
  for (std::size_t s = 0; s < kStages; ++s) {
    x = upsample2_forward(x);
    if (pass) pass->decoder_up_channels[s] = x.dim(3);
    const int skip = skip_block_for_stage(s);
    if (skip >= 0) x = concat_channels(x, skips[static_cast<std::size_t>(skip)]);
    x = conv_relu(x);
  }
  Tensor logits = conv2d_forward(x, layers_[li].params, pass ? &pass->conv[li] : nullptr);
  Tensor probs = sigmoid_forward(logits);
  if (pass) pass->pre_activation[li] = std::move(logits);
  return probs;
}

Tensor Model::predict(const Tensor& batch) const { return run(batch, nullptr); }

ForwardPass Model::forward(const Tensor& batch) const {
  ForwardPass pass;
  pass.output = run(batch, &pass);
  return pass;
}

GradientStore Model::backward(const ForwardPass& pass, const Tensor& loss_grad) const {
  require_same_shape(pass.output, loss_grad, "model backward");
  if (pass.conv.size() != layers_.size()) throw ShapeError("model backward: forward pass was run without caches");
  GradientStore grads(layers_.size());
  std::size_t li = layers_.size() - 1;

  auto conv_back = [&](const Tensor& upstream) {
    ConvGrads g = conv2d_backward(pass.conv[li], layers_[li].params, upstream);
    grads[li] = {std::move(g.kernels), std::move(g.biases)};
    --li;
    return std::move(g.input);
  };

  Tensor g = sigmoid_backward(pass.output, loss_grad);
  g = conv_back(g);

  std::array<Tensor, kStages> skip_grads;
  for (std::size_t s = kStages; s-- > 0;) {
    g = relu_backward(pass.pre_activation[li], g);
    g = conv_back(g);
    const int skip = skip_block_for_stage(s);
    if (skip >= 0) {
      auto [up, sk] = split_channels(g, pass.decoder_up_channels[s]);
      skip_grads[static_cast<std::size_t>(skip)] = std::move(sk);
      g = std::move(up);
    }
    g = upsample2_backward(g);
  }

  g = relu_backward(pass.pre_activation[li], g);
  g = conv_back(g);

  for (std::size_t b = kStages; b-- > 0;) {
    g = maxpool2_backward(pass.pool[b], g);
    if (b + 1 < kStages) accumulate(g, skip_grads[b]);
    for (std::size_t c = 0; c < kEncoderDepth[b]; ++c) {
      g = relu_backward(pass.pre_activation[li], g);
      g = conv_back(g);
    }
  }
  return grads;
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  out.reserve(layers_.size() * 2);
  for (const ConvLayer& l : layers_) {
    out.push_back({l.name + ".kernel", l.params.kernels});
    out.push_back({l.name + ".bias", l.params.biases});
  }
  return out;
}

Tensor* Model::find_parameter(const std::string& name) {
  for (ConvLayer& l : layers_) {
    if (name == l.name + ".kernel") return &l.params.kernels;
    if (name == l.name + ".bias") return &l.params.biases;
  }
  return nullptr;
}

std::vector<Tensor*> Model::parameter_tensors() {
  std::vector<Tensor*> out;
  out.reserve(layers_.size() * 2);
  for (ConvLayer& l : layers_) {
    out.push_back(&l.params.kernels);
    out.push_back(&l.params.biases);
  }
  return out;
}

std::vector<const Tensor*> Model::gradient_tensors(const GradientStore& grads) {
  std::vector<const Tensor*> out;
  out.reserve(grads.size() * 2);
  for (const ParamGrads& g : grads) {
    out.push_back(&g.kernels);
    out.push_back(&g.biases);
  }
  return out;
}

Model build_model(std::size_t height, std::size_t width, double width_multiplier, std::uint64_t seed) {
  ModelConfig config;
  config.height = height;
  config.width = width;
  config.width_multiplier = width_multiplier;
  config.seed = seed;
  return Model(config);
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  write_weight_file(path, model.named_parameters());
}

LoadReport apply_weights(Model& model, const std::vector<NamedTensor>& tensors, LoadMode mode) {
  // Validate everything before touching the model so a failed strict load
  // leaves it unchanged.
  LoadReport report;
  std::vector<std::pair<Tensor*, const Tensor*>> plan;
  std::map<std::string, int> seen;
  for (const NamedTensor& nt : tensors) {
    if (++seen[nt.name] > 1) throw FormatError("duplicate tensor '" + nt.name + "' in weight file");
    Tensor* target = model.find_parameter(nt.name);
    if (!target) {
      if (mode == LoadMode::kStrict) throw FormatError("unknown tensor '" + nt.name + "' in weight file");
      report.skipped.push_back(nt.name);
      continue;
    }
    if (!target->same_shape(nt.tensor)) {
      if (mode == LoadMode::kStrict) {
        throw ShapeError("tensor '" + nt.name + "' has shape " + shape_to_string(nt.tensor.shape()) +
                         ", model expects " + shape_to_string(target->shape()));
      }
      report.skipped.push_back(nt.name);
      continue;
    }
    plan.emplace_back(target, &nt.tensor);
    report.loaded.push_back(nt.name);
  }
  for (auto& [target, source] : plan) *target = *source;
  return report;
}

LoadReport load_weights(Model& model, const std::filesystem::path& path, LoadMode mode) {
  return apply_weights(model, read_weight_file(path), mode);
}

std::vector<NamedTensor> encoder_parameters(const Model& model) {
  std::vector<NamedTensor> out;
  for (const ConvLayer& l : model.layers()) {
    if (l.role != ConvRole::kEncoder) continue;
    out.push_back({l.name + ".kernel", l.params.kernels});
    out.push_back({l.name + ".bias", l.params.biases});
  }
  return out;
}

}  // namespace odseg
