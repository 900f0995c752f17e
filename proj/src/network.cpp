#include "endopoint/network.hpp"

#include <cmath>

#include "endopoint/ops.hpp"
#include "endopoint/rng.hpp"

namespace endopoint {

namespace {

constexpr std::size_t kEncoderLayers = 8;
constexpr std::size_t kDetectA = 8, kDetectB = 9, kDescribeA = 10,
                      kDescribeB = 11;

bool pool_after(std::size_t layer) {
  return layer == 1 || layer == 3 || layer == 5;
}

}  // namespace

std::vector<LayerSpec> layer_specs(const Architecture& arch) {
  const auto& w = arch.encoder_widths;
  return {
      {"conv1a", 3, 1, w[0]},
      {"conv1b", 3, w[0], w[0]},
      {"conv2a", 3, w[0], w[1]},
      {"conv2b", 3, w[1], w[1]},
      {"conv3a", 3, w[1], w[2]},
      {"conv3b", 3, w[2], w[2]},
      {"conv4a", 3, w[2], w[3]},
      {"conv4b", 3, w[3], w[3]},
      {"convPa", 3, w[3], arch.head_width},
      {"convPb", 1, arch.head_width, ops::kDetectChannels},
      {"convDa", 3, w[3], arch.head_width},
      {"convDb", 1, arch.head_width, kDescriptorDim},
  };
}

NetworkParams NetworkParams::initialize(const Architecture& arch,
                                        std::uint64_t seed) {
  NetworkParams p;
  p.arch = arch;
  Rng rng(seed);
  for (const LayerSpec& spec : layer_specs(arch)) {
    ConvLayer layer;
    layer.name = spec.name;
    layer.padding = spec.kernel / 2;
    layer.kernel = Tensor(
        {spec.kernel, spec.kernel, spec.in_channels, spec.out_channels});
    layer.bias = Tensor({spec.out_channels});
    const double fan_in =
        static_cast<double>(spec.kernel * spec.kernel * spec.in_channels);
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : layer.kernel.storage()) {
      v = static_cast<float>(rng.uniform(-bound, bound));
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void NetworkParams::validate() const {
  const auto specs = layer_specs(arch);
  if (layers.size() != specs.size()) {
    throw ShapeError("network has " + std::to_string(layers.size()) +
                     " conv layers, architecture expects " +
                     std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    const ConvLayer& l = layers[i];
    const Shape want_k{s.kernel, s.kernel, s.in_channels, s.out_channels};
    if (l.name != s.name) {
      throw ShapeError("layer " + std::to_string(i) + " is named '" + l.name +
                       "', expected '" + s.name + "'");
    }
    if (l.kernel.shape() != want_k) {
      throw ShapeError("layer '" + l.name + "' kernel has shape " +
                       shape_string(l.kernel.shape()) + ", expected " +
                       shape_string(want_k));
    }
    if (l.bias.shape() != Shape{s.out_channels}) {
      throw ShapeError("layer '" + l.name + "' bias has shape " +
                       shape_string(l.bias.shape()) + ", expected [" +
                       std::to_string(s.out_channels) + "]");
    }
  }
}

void validate_network_input(const Tensor& image) {
  require_rank(image, 2, "network input");
  if (image.dim(0) % ops::kCell != 0 || image.dim(1) % ops::kCell != 0 ||
      image.dim(0) == 0 || image.dim(1) == 0) {
    throw ShapeError("network input " + shape_string(image.shape()) +
                     " must have sides divisible by 8");
  }
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("network input pixel " + std::to_string(v) +
                                  " outside [0, 1]");
    }
  }
}

RawHeads forward(const NetworkParams& params, const Tensor& image) {
  validate_network_input(image);
  const auto& L = params.layers;
  auto conv = [&](const Tensor& x, std::size_t i) {
    return ops::conv2d(x, L[i].kernel, L[i].bias, 1, L[i].padding);
  };
  Tensor x = image.reshaped({image.dim(0), image.dim(1), 1});
  for (std::size_t i = 0; i < kEncoderLayers; ++i) {
    x = ops::relu(conv(x, i));
    if (pool_after(i)) x = ops::maxpool2(x);
  }
  RawHeads raw;
  raw.detect = conv(ops::relu(conv(x, kDetectA)), kDetectB);
  raw.describe = conv(ops::relu(conv(x, kDescribeA)), kDescribeB);
  return raw;
}

Tensor heatmap_from_detect(const Tensor& detect) {
  return ops::d2s(ops::drop_dustbin(ops::softmd(detect)));
}

DenseOutputs densify(const RawHeads& raw) {
  DenseOutputs dense;
  dense.heatmap = heatmap_from_detect(raw.detect);
  dense.descriptors =
      ops::l2_normalize(ops::bicubic_upsample(raw.describe, ops::kCell));
  return dense;
}

ParamVars bind_params(Tape& tape, const NetworkParams& params) {
  ParamVars vars;
  for (const ConvLayer& l : params.layers) {
    vars.kernels.push_back(tape.variable(l.kernel));
    vars.biases.push_back(tape.variable(l.bias));
  }
  return vars;
}

HeadVars forward(const NetworkParams& params, const ParamVars& vars,
                 Var image) {
  const auto& L = params.layers;
  auto conv = [&](Var x, std::size_t i) {
    return ops::conv2d(x, vars.kernels[i], vars.biases[i], 1, L[i].padding);
  };
  Var x = image;
  for (std::size_t i = 0; i < kEncoderLayers; ++i) {
    x = ops::relu(conv(x, i));
    if (pool_after(i)) x = ops::maxpool2(x);
  }
  HeadVars heads;
  heads.detect = conv(ops::relu(conv(x, kDetectA)), kDetectB);
  heads.describe = conv(ops::relu(conv(x, kDescribeA)), kDescribeB);
  return heads;
}

}  // namespace endopoint
