#include "featmimic/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace featmimic {

namespace {

constexpr std::string_view kLayerKindNames[] = {"dense", "conv2d", "relu", "maxpool2d", "flatten", "softmax"};

[[noreturn]] void reject(const std::string& what) { throw std::invalid_argument(what); }

Shape infer_output_shape(const LayerSpec& layer, const Shape& in) {
  const std::string where = "layer '" + layer.name + "': ";
  switch (layer.kind()) {
    case LayerKind::dense: {
      const auto& p = std::get<layers::Dense>(layer.params);
      const std::size_t n = shape_volume(in);
      if (p.units == 0) reject(where + "dense layer needs units > 0");
      if (p.weight.size() != p.units * n) {
        reject(where + "dense weight has " + std::to_string(p.weight.size()) + " values, expected " +
               std::to_string(p.units) + "x" + std::to_string(n));
      }
      if (p.bias.size() != p.units) reject(where + "dense bias length must equal units");
      return {p.units};
    }
    case LayerKind::conv2d: {
      const auto& p = std::get<layers::Conv2d>(layer.params);
      if (in.size() != 3) reject(where + "conv2d expects (C,H,W) input, got " + shape_string(in));
      if (p.out_channels == 0 || p.kernel_h == 0 || p.kernel_w == 0 || p.stride == 0) {
        reject(where + "conv2d extents and stride must be positive");
      }
      if (in[1] + 2 * p.padding < p.kernel_h || in[2] + 2 * p.padding < p.kernel_w) {
        reject(where + "conv2d kernel larger than padded input");
      }
      if (p.kernel.size() != p.out_channels * in[0] * p.kernel_h * p.kernel_w) {
        reject(where + "conv2d kernel channel count does not match input channels " + std::to_string(in[0]));
      }
      if (p.bias.size() != p.out_channels) reject(where + "conv2d bias length must equal out_channels");
      return {p.out_channels, (in[1] + 2 * p.padding - p.kernel_h) / p.stride + 1,
              (in[2] + 2 * p.padding - p.kernel_w) / p.stride + 1};
    }
    case LayerKind::maxpool2d: {
      const auto& p = std::get<layers::MaxPool2d>(layer.params);
      if (in.size() != 3) reject(where + "maxpool2d expects (C,H,W) input, got " + shape_string(in));
      if (p.window == 0 || p.stride == 0) reject(where + "maxpool2d window and stride must be positive");
      if (in[1] < p.window || in[2] < p.window) reject(where + "maxpool2d window larger than input");
      return {in[0], (in[1] - p.window) / p.stride + 1, (in[2] - p.window) / p.stride + 1};
    }
    case LayerKind::flatten:
      return {shape_volume(in)};
    case LayerKind::relu:
    case LayerKind::softmax:
      return in;
  }
  reject(where + "unknown layer kind");
}

// Layer forward passes. Accumulation order is fixed by the row-major layout.

Tensor dense_forward(const layers::Dense& p, const Tensor& x) {
  const std::size_t n = x.size();
  std::vector<float> y(p.units);
  for (std::size_t o = 0; o < p.units; ++o) {
    float acc = p.bias[o];
    const float* row = p.weight.data() + o * n;
    for (std::size_t i = 0; i < n; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return Tensor({p.units}, std::move(y));
}

Tensor dense_backward(const layers::Dense& p, const Tensor& x, const Tensor& gy) {
  const std::size_t n = x.size();
  Tensor gx(x.shape());
  for (std::size_t o = 0; o < p.units; ++o) {
    const float g = gy[o];
    const float* row = p.weight.data() + o * n;
    for (std::size_t i = 0; i < n; ++i) gx[i] += row[i] * g;
  }
  return gx;
}

Tensor conv_forward(const layers::Conv2d& p, const Tensor& x, const Shape& out_shape) {
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t OH = out_shape[1], OW = out_shape[2];
  Tensor y(out_shape);
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        float acc = p.bias[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t u = 0; u < p.kernel_h; ++u) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + u) - static_cast<std::ptrdiff_t>(p.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v = 0; v < p.kernel_w; ++v) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + v) - static_cast<std::ptrdiff_t>(p.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += p.kernel[((o * C + c) * p.kernel_h + u) * p.kernel_w + v] *
                     x[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
        y[(o * OH + oy) * OW + ox] = acc;
      }
    }
  }
  return y;
}

Tensor conv_backward(const layers::Conv2d& p, const Tensor& x, const Tensor& gy) {
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t OH = gy.shape()[1], OW = gy.shape()[2];
  Tensor gx(x.shape());
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const float g = gy[(o * OH + oy) * OW + ox];
        if (g == 0.0f) continue;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t u = 0; u < p.kernel_h; ++u) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + u) - static_cast<std::ptrdiff_t>(p.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v = 0; v < p.kernel_w; ++v) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + v) - static_cast<std::ptrdiff_t>(p.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              gx[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] +=
                  p.kernel[((o * C + c) * p.kernel_h + u) * p.kernel_w + v] * g;
            }
          }
        }
      }
    }
  }
  return gx;
}

// Flat input index of the first maximal element in each pooling window.
std::vector<std::size_t> pool_argmax(const layers::MaxPool2d& p, const Tensor& x, const Shape& out_shape) {
  const std::size_t H = x.shape()[1], W = x.shape()[2];
  const std::size_t C = out_shape[0], OH = out_shape[1], OW = out_shape[2];
  std::vector<std::size_t> arg(C * OH * OW);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = (c * H + oy * p.stride) * W + ox * p.stride;
        for (std::size_t u = 0; u < p.window; ++u) {
          for (std::size_t v = 0; v < p.window; ++v) {
            const std::size_t idx = (c * H + oy * p.stride + u) * W + ox * p.stride + v;
            if (x[idx] > x[best]) best = idx;
          }
        }
        arg[(c * OH + oy) * OW + ox] = best;
      }
    }
  }
  return arg;
}

Tensor pool_forward(const layers::MaxPool2d& p, const Tensor& x, const Shape& out_shape) {
  const auto arg = pool_argmax(p, x, out_shape);
  Tensor y(out_shape);
  for (std::size_t i = 0; i < arg.size(); ++i) y[i] = x[arg[i]];
  return y;
}

Tensor pool_backward(const layers::MaxPool2d& p, const Tensor& x, const Tensor& gy) {
  const auto arg = pool_argmax(p, x, gy.shape());
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gy[i];
  return gx;
}

Tensor softmax_forward(const Tensor& x) {
  float peak = x[0];
  for (float v : x.data()) peak = std::max(peak, v);
  std::vector<float> y(x.size());
  float sum = 0.0f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - peak);
    sum += y[i];
  }
  for (auto& v : y) v /= sum;
  return Tensor(x.shape(), std::move(y));
}

Tensor softmax_backward(const Tensor& y, const Tensor& gy) {
  float dot = 0.0f;
  for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
  Tensor gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = y[i] * (gy[i] - dot);
  return gx;
}

Tensor layer_forward(const LayerSpec& layer, const Tensor& x, const Shape& out_shape) {
  switch (layer.kind()) {
    case LayerKind::dense:
      return dense_forward(std::get<layers::Dense>(layer.params), x);
    case LayerKind::conv2d:
      return conv_forward(std::get<layers::Conv2d>(layer.params), x, out_shape);
    case LayerKind::relu: {
      Tensor y = x;
      for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
      return y;
    }
    case LayerKind::maxpool2d:
      return pool_forward(std::get<layers::MaxPool2d>(layer.params), x, out_shape);
    case LayerKind::flatten:
      return x.flattened();
    case LayerKind::softmax:
      return softmax_forward(x);
  }
  throw std::logic_error("unhandled layer kind");
}

// Vector-Jacobian product of one layer: input x, output y, upstream gradient gy.
Tensor layer_backward(const LayerSpec& layer, const Tensor& x, const Tensor& y, const Tensor& gy) {
  switch (layer.kind()) {
    case LayerKind::dense:
      return dense_backward(std::get<layers::Dense>(layer.params), x, gy);
    case LayerKind::conv2d:
      return conv_backward(std::get<layers::Conv2d>(layer.params), x, gy);
    case LayerKind::relu: {
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0f ? gy[i] : 0.0f;
      return gx;
    }
    case LayerKind::maxpool2d:
      return pool_backward(std::get<layers::MaxPool2d>(layer.params), x, gy);
    case LayerKind::flatten:
      return gy.reshaped(x.shape());
    case LayerKind::softmax:
      return softmax_backward(y, gy);
  }
  throw std::logic_error("unhandled layer kind");
}

Tensor preprocess(const Network& net, const Tensor& x) {
  if (x.shape() != net.input_shape()) {
    reject("input shape " + shape_string(x.shape()) + " does not match network input " +
           shape_string(net.input_shape()));
  }
  const auto& domain = net.pixel_domain();
  for (float v : x.data()) {
    if (!domain.contains(v)) reject("input value " + std::to_string(v) + " outside the pixel domain");
  }
  const auto& mean = net.channel_mean();
  if (mean.empty()) return x;
  Tensor out = x;
  const std::size_t plane = x.size() / (mean.size() == 1 ? x.size() : mean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= mean.size() == 1 ? mean[0] : mean[i / plane];
  return out;
}

// Runs layers 0..last inclusive.
ActivationTrace run_forward(const Network& net, const Tensor& x, std::size_t last) {
  ActivationTrace trace;
  trace.input = preprocess(net, x);
  trace.outputs.reserve(last + 1);
  for (std::size_t l = 0; l <= last; ++l) {
    const Tensor& in = l == 0 ? trace.input : trace.outputs.back();
    Tensor out = layer_forward(net.layers()[l], in, net.output_shape(l));
    if (!out.all_finite()) throw NumericFault("non-finite activation in layer '" + net.layers()[l].name + "'");
    trace.outputs.push_back(std::move(out));
  }
  return trace;
}

}  // namespace

std::string_view to_string(LayerKind kind) { return kLayerKindNames[static_cast<std::size_t>(kind)]; }

LayerKind layer_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kLayerKindNames); ++i) {
    if (kLayerKindNames[i] == name) return static_cast<LayerKind>(i);
  }
  reject("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(TapPhase phase) {
  return phase == TapPhase::pre_activation ? "pre_activation" : "post_activation";
}

TapPhase tap_phase_from_string(std::string_view name) {
  if (name == "pre_activation") return TapPhase::pre_activation;
  if (name == "post_activation") return TapPhase::post_activation;
  reject("unknown tap phase '" + std::string(name) + "'");
}

std::string to_string(const Tap& tap) { return tap.layer + ":" + std::string(to_string(tap.phase)); }

Network::Network(std::vector<LayerSpec> layers, Shape input_shape, PixelDomain domain, std::vector<float> channel_mean,
                 std::map<std::string, Tap> named_taps, std::vector<std::string> class_labels)
    : layers_(std::move(layers)),
      input_shape_(std::move(input_shape)),
      domain_(domain),
      channel_mean_(std::move(channel_mean)),
      named_taps_(std::move(named_taps)),
      class_labels_(std::move(class_labels)) {
  if (layers_.empty()) reject("network needs at least one layer");
  if (input_shape_.empty() || shape_volume(input_shape_) == 0) reject("network input shape must be non-empty");
  if (!(domain_.lo < domain_.hi)) reject("pixel domain must satisfy lo < hi");
  if (channel_mean_.size() > 1 && channel_mean_.size() != input_shape_[0]) {
    reject("preprocessing needs one mean per input channel");
  }
  for (float m : channel_mean_) {
    if (!domain_.contains(m)) reject("preprocessing offset lies outside the pixel domain");
  }
  Shape current = input_shape_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.name.empty()) reject("layer " + std::to_string(l) + " has no name");
    for (std::size_t k = 0; k < l; ++k) {
      if (layers_[k].name == layer.name) reject("duplicate layer name '" + layer.name + "'");
    }
    if (layer.kind() == LayerKind::softmax && l + 1 != layers_.size()) {
      reject("softmax may only appear as the final layer");
    }
    current = infer_output_shape(layer, current);
    output_shapes_.push_back(current);
  }
  for (const auto& [name, tap] : named_taps_) {
    try {
      resolve(tap);
    } catch (const std::invalid_argument& e) {
      reject("named tap '" + name + "': " + e.what());
    }
  }
  if (!class_labels_.empty() && class_labels_.size() != shape_volume(output_shapes_.back())) {
    reject("class label count does not match the network output width");
  }
}

const Shape& Network::input_shape_of(std::size_t index) const {
  return index == 0 ? input_shape_ : output_shapes_.at(index - 1);
}

std::size_t Network::layer_index(std::string_view name) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].name == name) return l;
  }
  reject("unknown layer '" + std::string(name) + "'");
}

std::size_t Network::resolve(const Tap& tap) const {
  const std::size_t index = layer_index(tap.layer);
  const bool relu_follows = index + 1 < layers_.size() && layers_[index + 1].kind() == LayerKind::relu;
  if (tap.phase == TapPhase::pre_activation) {
    if (!relu_follows) reject("tap " + to_string(tap) + ": pre_activation needs a following relu");
    return index;
  }
  return relu_follows ? index + 1 : index;
}

const Tap& Network::named_tap(std::string_view name) const {
  auto it = named_taps_.find(std::string(name));
  if (it == named_taps_.end()) reject("unknown named tap '" + std::string(name) + "'");
  return it->second;
}

bool Network::has_softmax_head() const { return layers_.back().kind() == LayerKind::softmax; }

std::size_t Network::num_classes() const {
  if (!has_softmax_head()) reject("network has no softmax head");
  return shape_volume(output_shapes_.back());
}

std::size_t Network::class_index(std::string_view label) const {
  auto it = std::find(class_labels_.begin(), class_labels_.end(), label);
  if (it == class_labels_.end()) reject("unknown class label '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - class_labels_.begin());
}

Tap Network::output_tap() const { return Tap{layers_.back().name, TapPhase::post_activation}; }

ActivationTrace forward(const Network& net, const Tensor& x) { return run_forward(net, x, net.layers().size() - 1); }

Tensor features(const Network& net, const Tensor& x, const Tap& tap) {
  const std::size_t index = net.resolve(tap);
  auto trace = run_forward(net, x, index);
  return trace.outputs.back().flattened();
}

double loss_euclidean(const Tensor& f, const Tensor& t) {
  if (f.shape() != t.shape()) {
    reject("loss operands differ in shape: " + shape_string(f.shape()) + " vs " + shape_string(t.shape()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = static_cast<double>(t[i]) - static_cast<double>(f[i]);
    sum += d * d;
  }
  return 0.5 * sum;
}

Tensor grad_input(const Network& net, const Tensor& x, const Tap& tap, const Tensor& t) {
  const std::size_t index = net.resolve(tap);
  auto trace = run_forward(net, x, index);
  const Tensor& f = trace.outputs.back();
  if (t.size() != f.size() || (t.rank() != 1 && t.shape() != f.shape())) {
    reject("target shape " + shape_string(t.shape()) + " does not match tap " + to_string(tap) + " shape " +
           shape_string(f.shape()));
  }
  // d/df of 0.5*||t - f||^2 is (f - t).
  Tensor grad(f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) grad[i] = f[i] - t[i];
  for (std::size_t l = index + 1; l-- > 0;) {
    const Tensor& in = l == 0 ? trace.input : trace.outputs[l - 1];
    grad = layer_backward(net.layers()[l], in, trace.outputs[l], grad);
  }
  // Mean subtraction has an identity Jacobian.
  if (!grad.all_finite()) throw NumericFault("non-finite input gradient at tap " + to_string(tap));
  return grad;
}

Classification classify(const Network& net, const Tensor& x) {
  if (!net.has_softmax_head()) reject("classify needs a network ending in softmax");
  auto trace = forward(net, x);
  const Tensor& p = trace.final_output();
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return {best, p.flattened()};
}

}  // namespace featmimic
