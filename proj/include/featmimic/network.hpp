#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "featmimic/tensor.hpp"

namespace featmimic {

/// Closed interval of valid raw pixel values.
struct PixelDomain {
  float lo = 0.0f;
  float hi = 255.0f;

  bool contains(float v) const { return v >= lo && v <= hi; }
  float clip(float v) const { return v < lo ? lo : (v > hi ? hi : v); }
  friend bool operator==(const PixelDomain&, const PixelDomain&) = default;
};

namespace layers {

/// Fully connected: weight is (units x inputs), row-major.
struct Dense {
  std::size_t units = 0;
  std::vector<float> weight;
  std::vector<float> bias;
};

/// 2-D convolution over (C,H,W) with zero padding and unit dilation.
/// kernel is (out_channels, in_channels, kernel_h, kernel_w), row-major.
struct Conv2d {
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::vector<float> kernel;
  std::vector<float> bias;
};

struct Relu {};

struct MaxPool2d {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct Flatten {};
struct Softmax {};

}  // namespace layers

enum class LayerKind { dense, conv2d, relu, maxpool2d, flatten, softmax };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

using LayerParams =
    std::variant<layers::Dense, layers::Conv2d, layers::Relu, layers::MaxPool2d, layers::Flatten, layers::Softmax>;

struct LayerSpec {
  std::string name;
  LayerParams params;

  LayerKind kind() const { return static_cast<LayerKind>(params.index()); }
};

enum class TapPhase { pre_activation, post_activation };

std::string_view to_string(TapPhase phase);
TapPhase tap_phase_from_string(std::string_view name);

/// Named extraction point. A post_activation tap on a layer that is directly
/// followed by a relu reads the relu output; pre_activation reads the layer's
/// own output and is only valid in that position.
struct Tap {
  std::string layer;
  TapPhase phase = TapPhase::post_activation;

  friend bool operator==(const Tap&, const Tap&) = default;
};

std::string to_string(const Tap& tap);

/// Immutable layered feed-forward network with validated shape chain.
class Network {
 public:
  Network(std::vector<LayerSpec> layers, Shape input_shape, PixelDomain domain = {},
          std::vector<float> channel_mean = {}, std::map<std::string, Tap> named_taps = {},
          std::vector<std::string> class_labels = {});

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& input_shape() const { return input_shape_; }
  const PixelDomain& pixel_domain() const { return domain_; }
  const std::vector<float>& channel_mean() const { return channel_mean_; }
  const std::map<std::string, Tap>& named_taps() const { return named_taps_; }
  const std::vector<std::string>& class_labels() const { return class_labels_; }

  /// Output shape of layer `index`.
  const Shape& output_shape(std::size_t index) const { return output_shapes_.at(index); }
  const Shape& input_shape_of(std::size_t index) const;

  /// Index of the layer whose output the tap reads. Throws std::invalid_argument.
  std::size_t resolve(const Tap& tap) const;
  std::size_t layer_index(std::string_view name) const;
  const Tap& named_tap(std::string_view name) const;

  bool has_softmax_head() const;
  std::size_t num_classes() const;
  /// Class index for a label listed in the description.
  std::size_t class_index(std::string_view label) const;
  /// Post-activation tap on the last layer.
  Tap output_tap() const;

 private:
  std::vector<LayerSpec> layers_;
  Shape input_shape_;
  PixelDomain domain_;
  std::vector<float> channel_mean_;
  std::map<std::string, Tap> named_taps_;
  std::vector<std::string> class_labels_;
  std::vector<Shape> output_shapes_;
};

/// Preprocessed input and the output of every layer, in layer order.
struct ActivationTrace {
  Tensor input;
  std::vector<Tensor> outputs;

  const Tensor& final_output() const { return outputs.back(); }
  const Tensor& at(const Network& net, const Tap& tap) const { return outputs.at(net.resolve(tap)); }
};

/// Full forward pass. Rejects inputs of the wrong shape or outside the pixel
/// domain; throws NumericFault if any layer produces a non-finite value.
ActivationTrace forward(const Network& net, const Tensor& x);

/// Flattened activation at `tap`.
Tensor features(const Network& net, const Tensor& x, const Tap& tap);

/// 0.5 * sum((t - f)^2).
double loss_euclidean(const Tensor& f, const Tensor& t);

/// Gradient of 0.5*||t - f_tap(x)||^2 with respect to the raw input x,
/// accumulated as vector-Jacobian products from the tap back to the input.
/// `t` may be flat or carry the activation shape at the tap.
Tensor grad_input(const Network& net, const Tensor& x, const Tap& tap, const Tensor& t);

struct Classification {
  std::size_t label = 0;
  Tensor probabilities;
};

/// Argmax of the softmax head; ties go to the lowest index.
Classification classify(const Network& net, const Tensor& x);

}  // namespace featmimic
