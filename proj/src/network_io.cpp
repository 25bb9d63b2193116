#include "featmimic/network_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace featmimic {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "weight blobs are read as native little-endian floats");

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

Shape to_shape(const json& j) {
  Shape s;
  for (const auto& e : j) s.push_back(e.get<std::size_t>());
  return s;
}

json tap_to_json(const Tap& tap) { return {{"layer", tap.layer}, {"phase", std::string(to_string(tap.phase))}}; }

Tap tap_from_json(const json& j) {
  return Tap{j.at("layer").get<std::string>(),
             tap_phase_from_string(j.value("phase", std::string("post_activation")))};
}

// Takes `count` floats from the blob cursor.
std::vector<float> take(const std::vector<float>& blob, std::size_t& cursor, std::size_t count,
                        const std::filesystem::path& path) {
  if (cursor + count > blob.size()) fail(path, "weight blob is too short for the declared layers");
  std::vector<float> out(blob.begin() + static_cast<std::ptrdiff_t>(cursor),
                         blob.begin() + static_cast<std::ptrdiff_t>(cursor + count));
  cursor += count;
  return out;
}

}  // namespace

std::vector<float> read_weight_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open weight blob");
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || magic != kWeightMagic) fail(path, "bad weight blob magic");
  if (version != kWeightVersion) fail(path, "unsupported weight blob version " + std::to_string(version));
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(float) != 0) fail(path, "weight blob payload is not a whole number of floats");
  std::vector<float> values(bytes.size() / sizeof(float));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

void write_weight_blob(const std::filesystem::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot write weight blob");
  out.write(kWeightMagic.data(), kWeightMagic.size());
  out.write(reinterpret_cast<const char*>(&kWeightVersion), sizeof kWeightVersion);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) fail(path, "write failed");
}

Network load_network(const std::filesystem::path& description) {
  std::ifstream in(description);
  if (!in) fail(description, "cannot open network description");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(description, std::string("invalid JSON: ") + e.what());
  }

  try {
    if (doc.value("format", std::string()) != "featmimic-network") fail(description, "not a featmimic-network file");
    Shape input_shape = to_shape(doc.at("input_shape"));
    PixelDomain domain;
    if (doc.contains("pixel_domain")) {
      domain.lo = doc["pixel_domain"].at(0).get<float>();
      domain.hi = doc["pixel_domain"].at(1).get<float>();
    }
    std::vector<float> mean;
    if (doc.contains("preprocessing")) mean = doc["preprocessing"].value("channel_mean", std::vector<float>{});

    const auto blob = read_weight_blob(description.parent_path() / doc.at("weights").get<std::string>());
    std::size_t cursor = 0;

    std::vector<LayerSpec> layer_list;
    std::vector<Shape> declared_shapes;
    Shape current = input_shape;
    for (const auto& jl : doc.at("layers")) {
      LayerSpec layer;
      layer.name = jl.at("name").get<std::string>();
      switch (layer_kind_from_string(jl.at("kind").get<std::string>())) {
        case LayerKind::dense: {
          layers::Dense p;
          p.units = jl.at("units").get<std::size_t>();
          const std::size_t n = shape_volume(current);
          p.weight = take(blob, cursor, p.units * n, description);
          p.bias = take(blob, cursor, p.units, description);
          current = {p.units};
          layer.params = std::move(p);
          break;
        }
        case LayerKind::conv2d: {
          layers::Conv2d p;
          p.out_channels = jl.at("out_channels").get<std::size_t>();
          p.kernel_h = jl.at("kernel").at(0).get<std::size_t>();
          p.kernel_w = jl.at("kernel").at(1).get<std::size_t>();
          p.stride = jl.value("stride", std::size_t{1});
          p.padding = jl.value("padding", std::size_t{0});
          if (current.size() != 3) fail(description, "conv2d layer '" + layer.name + "' needs (C,H,W) input");
          p.kernel = take(blob, cursor, p.out_channels * current[0] * p.kernel_h * p.kernel_w, description);
          p.bias = take(blob, cursor, p.out_channels, description);
          current = {p.out_channels, (current[1] + 2 * p.padding - p.kernel_h) / p.stride + 1,
                     (current[2] + 2 * p.padding - p.kernel_w) / p.stride + 1};
          layer.params = std::move(p);
          break;
        }
        case LayerKind::relu:
          layer.params = layers::Relu{};
          break;
        case LayerKind::maxpool2d: {
          layers::MaxPool2d p;
          p.window = jl.at("window").get<std::size_t>();
          p.stride = jl.value("stride", p.window);
          if (current.size() != 3) fail(description, "maxpool2d layer '" + layer.name + "' needs (C,H,W) input");
          current = {current[0], (current[1] - p.window) / p.stride + 1, (current[2] - p.window) / p.stride + 1};
          layer.params = p;
          break;
        }
        case LayerKind::flatten:
          layer.params = layers::Flatten{};
          current = {shape_volume(current)};
          break;
        case LayerKind::softmax:
          layer.params = layers::Softmax{};
          break;
      }
      declared_shapes.push_back(jl.contains("output_shape") ? to_shape(jl["output_shape"]) : Shape{});
      layer_list.push_back(std::move(layer));
    }
    if (cursor != blob.size()) fail(description, "weight blob has " + std::to_string(blob.size() - cursor) + " unused values");

    std::map<std::string, Tap> taps;
    if (doc.contains("taps")) {
      for (const auto& [name, jt] : doc["taps"].items()) taps.emplace(name, tap_from_json(jt));
    }
    auto labels = doc.value("labels", std::vector<std::string>{});

    Network net(std::move(layer_list), std::move(input_shape), domain, std::move(mean), std::move(taps),
                std::move(labels));
    for (std::size_t l = 0; l < declared_shapes.size(); ++l) {
      if (!declared_shapes[l].empty() && declared_shapes[l] != net.output_shape(l)) {
        fail(description, "layer '" + net.layers()[l].name + "' declares output shape " +
                              shape_string(declared_shapes[l]) + " but computes " + shape_string(net.output_shape(l)));
      }
    }
    return net;
  } catch (const json::exception& e) {
    fail(description, std::string("schema error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    fail(description, e.what());
  }
}

void save_network(const Network& net, const std::filesystem::path& description,
                  const std::filesystem::path& weights) {
  json doc;
  doc["format"] = "featmimic-network";
  doc["version"] = 1;
  doc["input_shape"] = net.input_shape();
  doc["pixel_domain"] = {net.pixel_domain().lo, net.pixel_domain().hi};
  if (!net.channel_mean().empty()) doc["preprocessing"] = {{"channel_mean", net.channel_mean()}};
  doc["weights"] = weights.filename().string();
  std::vector<float> blob;
  json jlayers = json::array();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    json jl = {{"name", layer.name}, {"kind", std::string(to_string(layer.kind()))}};
    if (const auto* d = std::get_if<layers::Dense>(&layer.params)) {
      jl["units"] = d->units;
      blob.insert(blob.end(), d->weight.begin(), d->weight.end());
      blob.insert(blob.end(), d->bias.begin(), d->bias.end());
    } else if (const auto* c = std::get_if<layers::Conv2d>(&layer.params)) {
      jl["out_channels"] = c->out_channels;
      jl["kernel"] = {c->kernel_h, c->kernel_w};
      jl["stride"] = c->stride;
      jl["padding"] = c->padding;
      blob.insert(blob.end(), c->kernel.begin(), c->kernel.end());
      blob.insert(blob.end(), c->bias.begin(), c->bias.end());
    } else if (const auto* p = std::get_if<layers::MaxPool2d>(&layer.params)) {
      jl["window"] = p->window;
      jl["stride"] = p->stride;
    }
    jl["output_shape"] = net.output_shape(l);
    jlayers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(jlayers);
  if (!net.class_labels().empty()) doc["labels"] = net.class_labels();
  json jtaps = json::object();
  for (const auto& [name, tap] : net.named_taps()) jtaps[name] = tap_to_json(tap);
  doc["taps"] = std::move(jtaps);

  std::ofstream out(description);
  if (!out) fail(description, "cannot write network description");
  out << doc.dump(2) << '\n';
  write_weight_blob(weights, blob);
}

}  // namespace featmimic
