#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "endopoint/autodiff.hpp"
#include "endopoint/tensor.hpp"

namespace endopoint {

inline constexpr std::size_t kDescriptorDim = 256;

/// Channel widths of a SuperPoint-style network. The encoder has four stages
/// of two 3x3 convolutions each, with a 2x2 max pool after the first three.
/// Each head is a 3x3 convolution to `head_width` followed by a 1x1
/// convolution to 65 (detection) or 256 (description) channels.
struct Architecture {
  std::array<std::size_t, 4> encoder_widths{64, 64, 128, 128};
  std::size_t head_width = 256;

  static Architecture reference() { return {}; }
  static Architecture toy() { return {{8, 8, 16, 16}, 32}; }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

enum class LayerKind : std::uint8_t {
  Conv = 0,
  Activation = 1,
  Pool = 2,
  Architecture = 3,
};

struct ConvLayer {
  std::string name;
  Tensor kernel;  // k x k x Cin x Cout
  Tensor bias;    // Cout
  std::size_t padding = 0;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Expected name, kernel size, and channel counts of every conv layer, in
/// evaluation order: conv1a..conv4b, convPa, convPb, convDa, convDb.
struct LayerSpec {
  std::string name;
  std::size_t kernel, in_channels, out_channels;
};
std::vector<LayerSpec> layer_specs(const Architecture& arch);

struct NetworkParams {
  Architecture arch;
  std::vector<ConvLayer> layers;

  /// He-uniform kernels, zero biases. Values are rounded to float so the
  /// weights file round-trips exactly.
  static NetworkParams initialize(const Architecture& arch,
                                  std::uint64_t seed);

  /// Throws ShapeError naming the first layer that disagrees with `arch`.
  void validate() const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// Raw head outputs at cell resolution.
struct RawHeads {
  Tensor detect;    // H/8 x W/8 x 65, last channel is the dustbin
  Tensor describe;  // H/8 x W/8 x 256
};

/// Pixel-resolution outputs.
struct DenseOutputs {
  Tensor heatmap;      // H x W, keypoint probability
  Tensor descriptors;  // H x W x 256, unit norm
};

/// Checks the network input contract: rank-2, sides divisible by 8, values
/// in [0, 1].
void validate_network_input(const Tensor& image);

RawHeads forward(const NetworkParams& params, const Tensor& image);
DenseOutputs densify(const RawHeads& raw);

/// Heatmap alone: d2s(drop_dustbin(softmd(detect))).
Tensor heatmap_from_detect(const Tensor& detect);

/// Differentiable view of the parameters on a tape.
struct ParamVars {
  std::vector<Var> kernels;
  std::vector<Var> biases;
};
ParamVars bind_params(Tape& tape, const NetworkParams& params);

struct HeadVars {
  Var detect;
  Var describe;
};
HeadVars forward(const NetworkParams& params, const ParamVars& vars,
                 Var image);

}  // namespace endopoint
