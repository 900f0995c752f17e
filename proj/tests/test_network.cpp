#include <doctest.h>

#include <cmath>
#include <random>

#include "endopoint/network.hpp"
#include "endopoint/ops.hpp"
#include "test_util.hpp"

using namespace endopoint;
using testutil::random_tensor;

namespace {

// Layer-by-layer composition written out independently of forward().
RawHeads oracle_forward(const NetworkParams& p, const Tensor& image) {
  auto conv = [&](const Tensor& x, std::size_t i) {
    const ConvLayer& l = p.layers[i];
    return ops::conv2d(x, l.kernel, l.bias, 1, l.kernel.dim(0) / 2);
  };
  Tensor x = image.reshaped({image.dim(0), image.dim(1), 1});
  for (std::size_t stage = 0; stage < 4; ++stage) {
    x = ops::relu(conv(x, 2 * stage));
    x = ops::relu(conv(x, 2 * stage + 1));
    if (stage < 3) x = ops::maxpool2(x);
  }
  RawHeads h;
  h.detect = conv(ops::relu(conv(x, 8)), 9);
  h.describe = conv(ops::relu(conv(x, 10)), 11);
  return h;
}

}  // namespace

TEST_CASE("layer specs follow the encoder and head layout") {
  const auto specs = layer_specs(Architecture::reference());
  REQUIRE(specs.size() == 12);
  CHECK(specs[0].name == "conv1a");
  CHECK(specs[0].in_channels == 1);
  CHECK(specs[3].out_channels == 64);
  CHECK(specs[4].out_channels == 128);
  CHECK(specs[9].name == "convPb");
  CHECK(specs[9].kernel == 1);
  CHECK(specs[9].out_channels == 65);
  CHECK(specs[11].out_channels == 256);
}

TEST_CASE("initialization is deterministic, float exact and validated") {
  const auto a = NetworkParams::initialize(Architecture::toy(), 7);
  const auto b = NetworkParams::initialize(Architecture::toy(), 7);
  const auto c = NetworkParams::initialize(Architecture::toy(), 8);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const ConvLayer& l : a.layers)
    for (double v : l.kernel.data()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  CHECK_NOTHROW(a.validate());
  auto broken = a;
  broken.layers[3].kernel = Tensor({3, 3, 8, 9});
  try {
    broken.validate();
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("conv2b") != std::string::npos);
  }
}

TEST_CASE("network input contract") {
  CHECK_THROWS_AS(validate_network_input(Tensor({16, 12})), ShapeError);
  CHECK_THROWS_AS(validate_network_input(Tensor({16, 16, 1})), ShapeError);
  CHECK_THROWS_AS(validate_network_input(Tensor({0, 16})), ShapeError);
  Tensor bright({8, 8}, 1.5);
  CHECK_THROWS(validate_network_input(bright));
  CHECK_NOTHROW(validate_network_input(Tensor({8, 16}, 0.5)));
}

TEST_CASE("forward matches the layer-by-layer oracle and the taped path") {
  std::mt19937_64 rng(1);
  const auto p = NetworkParams::initialize(Architecture::toy(), 3);
  const Tensor image = random_tensor({16, 24}, rng, 0.0, 1.0);
  const RawHeads h = forward(p, image);
  const RawHeads o = oracle_forward(p, image);
  CHECK(h.detect.shape() == Shape{2, 3, 65});
  CHECK(h.describe.shape() == Shape{2, 3, 256});
  CHECK(h.detect == o.detect);
  CHECK(h.describe == o.describe);

  Tape tape;
  const ParamVars vars = bind_params(tape, p);
  const HeadVars hv = forward(p, vars, tape.constant(image.reshaped({16, 24, 1})));
  CHECK(hv.detect.value() == h.detect);
  CHECK(hv.describe.value() == h.describe);
}

TEST_CASE("densify produces a probability map and unit descriptors") {
  std::mt19937_64 rng(2);
  const auto p = NetworkParams::initialize(Architecture::toy(), 4);
  const Tensor image = random_tensor({16, 16}, rng, 0.0, 1.0);
  const RawHeads h = forward(p, image);
  const DenseOutputs d = densify(h);
  REQUIRE(d.heatmap.shape() == Shape{16, 16});
  REQUIRE(d.descriptors.shape() == Shape{16, 16, 256});
  CHECK(d.heatmap == heatmap_from_detect(h.detect));
  // each cell's pixels plus the dustbin sum to one
  const Tensor prob = ops::softmd(h.detect);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = prob.at(i, j, 64);
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) s += d.heatmap.at(8 * i + r, 8 * j + c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  for (std::size_t px = 0; px < 256; ++px) {
    double n = 0;
    for (std::size_t k = 0; k < 256; ++k) n += d.descriptors[px * 256 + k] * d.descriptors[px * 256 + k];
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
}
