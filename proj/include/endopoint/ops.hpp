#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "endopoint/autodiff.hpp"
#include "endopoint/tensor.hpp"

namespace endopoint::ops {

inline constexpr std::size_t kCell = 8;
inline constexpr std::size_t kCellChannels = kCell * kCell;        // 64
inline constexpr std::size_t kDetectChannels = kCellChannels + 1;  // + dustbin
inline constexpr double kNormFloor = 1e-12;

// Pure tensor operations. Image-like tensors are H x W x C.

/// Zero-padded cross-correlation. kernel is k x k x Cin x Cout.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);
Tensor relu(const Tensor& x);
/// 2x2 max pooling with stride 2; rejects odd spatial sizes.
Tensor maxpool2(const Tensor& x);
/// Channel softmax of the Hc x Wc x 65 detection tensor.
Tensor softmd(const Tensor& x);
/// Drops the trailing dustbin channel: Hc x Wc x 65 -> Hc x Wc x 64.
Tensor drop_dustbin(const Tensor& x);
/// Depth-to-space with 8x8 blocks: Hc x Wc x 64 -> 8Hc x 8Wc. Channel c of
/// cell (i, j) lands on pixel (8i + c / 8, 8j + c % 8).
Tensor d2s(const Tensor& x);
/// Inverse of d2s: H x W -> H/8 x W/8 x 64.
Tensor space_to_depth(const Tensor& image);
/// Catmull-Rom (a = -0.5) upsampling, half-pixel centres, clamped borders.
Tensor bicubic_upsample(const Tensor& x, std::size_t factor);
/// Divides every trailing-axis vector by max(norm, 1e-12).
Tensor l2_normalize(const Tensor& x);

/// Interpolation taps for one output coordinate of bicubic_upsample.
struct CubicTaps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};
CubicTaps cubic_taps(std::size_t out_index, std::size_t factor,
                     std::size_t extent);

/// Channel vector of bicubic_upsample(x, factor) at one output pixel, without
/// materialising the full map. Bit-identical to the dense result.
void bicubic_sample(const Tensor& x, std::size_t factor, std::size_t out_row,
                    std::size_t out_col, std::span<double> out);

// Differentiable counterparts recorded on a tape.

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride = 1,
           std::size_t padding = 0);
Var relu(Var x);
Var maxpool2(Var x);
Var softmd(Var x);
Var drop_dustbin(Var x);
Var d2s(Var x);
Var bicubic_upsample(Var x, std::size_t factor);
Var l2_normalize(Var x);
Var sum(Var x);
Var add(Var a, Var b);
Var scale(Var x, double factor);

}  // namespace endopoint::ops
