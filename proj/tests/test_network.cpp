#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>

#include "featmimic/image.hpp"
#include "featmimic/network.hpp"
#include "featmimic/network_io.hpp"
#include "reference.hpp"

using namespace featmimic;
using featmimic::testing::toy_net;

namespace {

Network dense_net(std::size_t in, std::size_t out, std::vector<float> w, std::vector<float> b,
                  PixelDomain domain = {}) {
  return Network({LayerSpec{"fc", layers::Dense{out, std::move(w), std::move(b)}}}, {in}, domain);
}

const Tap kDescriptor{"fc1", TapPhase::pre_activation};
const Tap kSoftmax{"prob", TapPhase::post_activation};

Tensor probe_image() { return read_pnm(featmimic::testing::fixture_dir() / "images/probe_s00_00.pgm"); }

}  // namespace

TEST_SUITE("net_core") {
  TEST_CASE("identity dense layer passes input through") {
    const auto net = dense_net(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0});
    const auto trace = forward(net, Tensor({3}, {1, 2, 3}));
    CHECK(trace.final_output() == Tensor({3}, {1, 2, 3}));
  }

  TEST_CASE("relu layer clamps negatives") {
    const Network net({LayerSpec{"r", layers::Relu{}}}, {3}, PixelDomain{-10, 10});
    CHECK(forward(net, Tensor({3}, {-1, 0, 2})).final_output() == Tensor({3}, {0, 0, 2}));
  }

  TEST_CASE("bundled network matches the frozen golden trace") {
    std::ifstream in(featmimic::testing::fixture_dir() / "golden_trace.json");
    const auto golden = nlohmann::json::parse(in);
    const auto& net = toy_net();
    const auto x = probe_image();
    const auto trace = forward(net, x);
    const auto softmax = golden["softmax"].get<std::vector<double>>();
    REQUIRE(trace.final_output().size() == softmax.size());
    for (std::size_t i = 0; i < softmax.size(); ++i) CHECK(trace.final_output()[i] == doctest::Approx(softmax[i]).epsilon(1e-4));
    const auto descriptor = golden["descriptor"].get<std::vector<double>>();
    const auto f = features(net, x, kDescriptor);
    REQUIRE(f.size() == descriptor.size());
    for (std::size_t i = 0; i < descriptor.size(); ++i) {
      CHECK(std::fabs(f[i] - descriptor[i]) <= 1e-4 * std::max(1.0, std::fabs(descriptor[i])));
    }
  }

  TEST_CASE("softmax output sums to one and every layer has an entry") {
    const auto trace = forward(toy_net(), probe_image());
    CHECK(trace.outputs.size() == toy_net().layers().size());
    double sum = 0.0;
    for (float p : trace.final_output().data()) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }

  TEST_CASE("features at the softmax tap equal the final output") {
    const auto x = probe_image();
    CHECK(features(toy_net(), x, kSoftmax) == forward(toy_net(), x).final_output().flattened());
    CHECK(features(toy_net(), x, toy_net().output_tap()) == forward(toy_net(), x).final_output().flattened());
  }

  TEST_CASE("descriptor tap width equals the penultimate dense layer") {
    const auto& net = toy_net();
    const auto& fc1 = std::get<layers::Dense>(net.layers()[net.layer_index("fc1")].params);
    CHECK(features(net, probe_image(), kDescriptor).size() == fc1.units);
    CHECK(features(net, probe_image(), net.named_tap("descriptor")).size() == 32);
  }

  TEST_CASE("all-negative pre-activation gives all-zero post-activation") {
    const Network net({LayerSpec{"fc", layers::Dense{2, {1, 0, 0, 1}, {-100, -100}}}, LayerSpec{"act", layers::Relu{}}},
                      {2});
    const Tensor x({2}, {3, 4});
    const auto pre = features(net, x, Tap{"fc", TapPhase::pre_activation});
    CHECK(pre == Tensor({2}, {-97, -96}));
    CHECK(features(net, x, Tap{"fc", TapPhase::post_activation}) == Tensor({2}, {0, 0}));
    CHECK(forward(net, x).at(net, Tap{"fc", TapPhase::pre_activation}) == pre);
  }

  TEST_CASE("tap validation") {
    const auto x = probe_image();
    CHECK_THROWS_AS(features(toy_net(), x, Tap{"nope", TapPhase::post_activation}), std::invalid_argument);
    // fc2 feeds the softmax, not an elementwise nonlinearity.
    CHECK_THROWS_AS(features(toy_net(), x, Tap{"fc2", TapPhase::pre_activation}), std::invalid_argument);
    CHECK_THROWS_AS(toy_net().named_tap("missing"), std::invalid_argument);
  }

  TEST_CASE("forward rejects bad inputs") {
    const auto& net = toy_net();
    CHECK_THROWS_AS(forward(net, Tensor({1, 16, 16})), std::invalid_argument);
    Tensor x = probe_image();
    x[5] = 300.0f;
    CHECK_THROWS_AS(forward(net, x), std::invalid_argument);
  }

  TEST_CASE("non-finite activations raise a numeric fault") {
    const auto net = dense_net(2, 1, {3e38f, 3e38f}, {0});
    CHECK_THROWS_AS(forward(net, Tensor({2}, {200, 200})), NumericFault);
  }

  TEST_CASE("network construction validates the layer chain") {
    CHECK_THROWS_AS(dense_net(3, 2, {1, 2, 3}, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Network({LayerSpec{"s", layers::Softmax{}}, LayerSpec{"r", layers::Relu{}}}, {3}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Network({LayerSpec{"a", layers::Relu{}}, LayerSpec{"a", layers::Relu{}}}, {3}),
                    std::invalid_argument);
    layers::Conv2d conv{1, 3, 3, 1, 1, std::vector<float>(9), {0}};
    CHECK_NOTHROW(Network({LayerSpec{"c", conv}}, {1, 4, 4}));
    CHECK_THROWS_AS(Network({LayerSpec{"c", conv}}, {2, 4, 4}), std::invalid_argument);
    CHECK_THROWS_AS(Network({LayerSpec{"r", layers::Relu{}}}, {3}, PixelDomain{}, {300.0f}), std::invalid_argument);
  }

  TEST_CASE("loss_euclidean") {
    CHECK(loss_euclidean(Tensor({2}, {1, 2}), Tensor({2}, {1, 2})) == 0.0);
    CHECK(loss_euclidean(Tensor({2}, {0, 0}), Tensor({2}, {3, 4})) == 12.5);
    CHECK_THROWS_AS(loss_euclidean(Tensor({2}), Tensor({3})), std::invalid_argument);

    std::mt19937 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const auto f = featmimic::testing::random_image(rng, {17}, -50, 50);
      const auto t = featmimic::testing::random_image(rng, {17}, -50, 50);
      double oracle = 0.0;
      for (std::size_t i = 0; i < 17; ++i) oracle += 0.5 * std::pow(double(t[i]) - double(f[i]), 2);
      CHECK(loss_euclidean(f, t) == doctest::Approx(oracle).epsilon(1e-12));
      CHECK(loss_euclidean(f, t) >= 0.0);
    }
  }

  TEST_CASE("grad_input vanishes at the loss minimum") {
    const auto x = probe_image();
    for (const Tap& tap : {kDescriptor, kSoftmax, Tap{"pool1", TapPhase::post_activation}}) {
      const auto g = grad_input(toy_net(), x, tap, features(toy_net(), x, tap));
      CHECK(g.shape() == x.shape());
      CHECK(g.max_abs() == 0.0f);
    }
  }

  TEST_CASE("grad_input of a 2x2 linear layer is W^T (f - t)") {
    const auto net = dense_net(2, 2, {1, 2, 3, 4}, {0, 0});
    // f = W(1,1) = (3,7), t = 0: W^T f = (1*3 + 3*7, 2*3 + 4*7) = (24, 34).
    const auto g = grad_input(net, Tensor({2}, {1, 1}), Tap{"fc"}, Tensor({2}, {0, 0}));
    CHECK(g == Tensor({2}, {24, 34}));
  }

  TEST_CASE("grad_input matches finite differences on the bundled network") {
    const auto& net = toy_net();
    std::mt19937 rng(3);
    for (const Tap& tap : {kDescriptor, kSoftmax}) {
      const auto x = featmimic::testing::random_image(rng, net.input_shape(), 5, 250);
      const auto t = features(net, probe_image(), tap);
      const auto g = grad_input(net, x, tap, t);
      const auto fd = featmimic::testing::finite_difference_grad(net, featmimic::testing::to_double(x),
                                                                 net.resolve(tap), featmimic::testing::to_double(t),
                                                                 1e-2);
      std::size_t checked = 0, good = 0;
      for (std::size_t i = 0; i < fd.size(); ++i) {
        if (std::fabs(g[i]) <= 1e-6) continue;
        ++checked;
        good += std::fabs(g[i] - fd[i]) <= 1e-3 * std::max(std::fabs(double(g[i])), std::fabs(fd[i]));
      }
      CHECK(checked > 0);
      CHECK(static_cast<double>(good) >= 0.99 * static_cast<double>(checked));
    }
  }

  TEST_CASE("linear network gradient does not depend on the input") {
    const Network net({LayerSpec{"a", layers::Dense{3, {1, -2, 0.5f, 0, 1, 1, 2, 2, -1, 1, 0, 3}, {1, 2, 3}}},
                       LayerSpec{"b", layers::Dense{2, {1, 1, 1, -1, 0.5f, 2}, {0, 0}}}},
                      {4});
    // Loss gradient W^T (W x + b - t) varies with x, but the LOTS direction of a
    // purely linear map with t chosen relative to f(x) does not.
    std::mt19937 rng(5);
    const Tensor delta({2}, {1.5f, -2.0f});
    std::vector<Tensor> grads;
    for (int k = 0; k < 2; ++k) {
      const auto x = featmimic::testing::random_image(rng, {4}, 0, 255, true);
      auto t = features(net, x, Tap{"b"});
      for (std::size_t i = 0; i < 2; ++i) t[i] -= delta[i];
      grads.push_back(grad_input(net, x, Tap{"b"}, t));
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(grads[0][i] == doctest::Approx(grads[1][i]).epsilon(1e-5));
  }

  TEST_CASE("relu subgradient at zero is zero and maxpool ties route to the first element") {
    const Network relu_net({LayerSpec{"r", layers::Relu{}}}, {2}, PixelDomain{-5, 5});
    CHECK(grad_input(relu_net, Tensor({2}, {0, 1}), Tap{"r"}, Tensor({2}, {-1, -1})) == Tensor({2}, {0, 2}));

    const Network pool_net({LayerSpec{"p", layers::MaxPool2d{2, 2}}}, {1, 2, 2});
    const auto g = grad_input(pool_net, Tensor({1, 2, 2}, {5, 5, 5, 5}), Tap{"p"}, Tensor({1}, {0}));
    CHECK(g == Tensor({1, 2, 2}, {5, 0, 0, 0}));
  }

  TEST_CASE("grad_input rejects a mismatched target") {
    CHECK_THROWS_AS(grad_input(toy_net(), probe_image(), kDescriptor, Tensor({10})), std::invalid_argument);
  }

  TEST_CASE("classify") {
    const Network head({LayerSpec{"prob", layers::Softmax{}}}, {3}, PixelDomain{-20, 20});
    CHECK(classify(head, Tensor({3}, {0, 0, 10})).label == 2);
    CHECK(classify(head, Tensor({3}, {1, 1, 1})).label == 0);  // ties: lowest index
    const auto c = classify(toy_net(), probe_image());
    CHECK(c.label == toy_net().class_index("s00"));
    CHECK(c.probabilities == forward(toy_net(), probe_image()).final_output());
    CHECK_THROWS_AS(classify(dense_net(2, 2, {1, 0, 0, 1}, {0, 0}), Tensor({2}, {1, 2})), std::invalid_argument);
  }

  TEST_CASE("forward is bit-deterministic") {
    const auto x = probe_image();
    const auto a = forward(toy_net(), x);
    const auto b = forward(toy_net(), x);
    CHECK(a.input == b.input);
    CHECK(a.outputs == b.outputs);
  }

  TEST_CASE("network description round-trips through save and load") {
    const auto dir = std::filesystem::temp_directory_path() / "featmimic_net_io";
    std::filesystem::create_directories(dir);
    save_network(toy_net(), dir / "net.json", dir / "net.weights");
    const auto copy = load_network(dir / "net.json");
    const auto x = probe_image();
    CHECK(forward(copy, x).outputs == forward(toy_net(), x).outputs);
    CHECK(copy.named_taps() == toy_net().named_taps());
    CHECK(copy.class_labels() == toy_net().class_labels());

    // Corrupt magic.
    {
      std::fstream f(dir / "net.weights", std::ios::in | std::ios::out | std::ios::binary);
      f.write("XXXXXXXX", 8);
    }
    CHECK_THROWS_AS(load_network(dir / "net.json"), std::runtime_error);

    // Truncated payload.
    auto blob = read_weight_blob(featmimic::testing::fixture_dir() / "toy_net.weights");
    blob.pop_back();
    write_weight_blob(dir / "net.weights", blob);
    CHECK_THROWS_AS(load_network(dir / "net.json"), std::runtime_error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("declared output shapes are checked") {
    const auto dir = std::filesystem::temp_directory_path() / "featmimic_net_shape";
    std::filesystem::create_directories(dir);
    save_network(toy_net(), dir / "net.json", dir / "net.weights");
    nlohmann::json doc;
    {
      std::ifstream in(dir / "net.json");
      doc = nlohmann::json::parse(in);
    }
    doc["layers"][0]["output_shape"] = {6, 31, 32};
    std::ofstream(dir / "net.json") << doc.dump();
    CHECK_THROWS_AS(load_network(dir / "net.json"), std::runtime_error);
    std::filesystem::remove_all(dir);
  }
}
