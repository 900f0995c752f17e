#pragma once

// Hot loops of the toolkit. Every kernel exists twice: a plain serial
// reference and an OpenMP version. Both accumulate each output element in the
// same order, so their results are bit-identical.

#include <cstddef>
#include <cstdint>
#include <span>

namespace endopoint::kernels {

struct ConvGeometry {
  std::size_t height = 0, width = 0;  // input spatial size
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel = 1, stride = 1, padding = 0;
  std::size_t out_height = 0, out_width = 0;
};

ConvGeometry make_conv_geometry(std::size_t height, std::size_t width,
                                std::size_t in_channels,
                                std::size_t out_channels, std::size_t kernel,
                                std::size_t stride, std::size_t padding);

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out);
// Overwrites grad_input.
void conv2d_backward_input(const ConvGeometry& g,
                           std::span<const double> grad_out,
                           std::span<const double> kernel,
                           std::span<double> grad_input);
// Overwrites grad_kernel and grad_bias.
void conv2d_backward_kernel(const ConvGeometry& g,
                            std::span<const double> input,
                            std::span<const double> grad_out,
                            std::span<double> grad_kernel,
                            std::span<double> grad_bias);
// out[i * m + j] = squared L2 distance between row i of a and row j of b.
void pairwise_sq_l2(std::span<const double> a, std::size_t n,
                    std::span<const double> b, std::size_t m, std::size_t dim,
                    std::span<double> out);
// Rows are packed bit strings of `bytes` bytes each.
void pairwise_hamming(std::span<const std::uint8_t> a, std::size_t n,
                      std::span<const std::uint8_t> b, std::size_t m,
                      std::size_t bytes, std::span<double> out);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g,
                           std::span<const double> grad_out,
                           std::span<const double> kernel,
                           std::span<double> grad_input);
void conv2d_backward_kernel(const ConvGeometry& g,
                            std::span<const double> input,
                            std::span<const double> grad_out,
                            std::span<double> grad_kernel,
                            std::span<double> grad_bias);
void pairwise_sq_l2(std::span<const double> a, std::size_t n,
                    std::span<const double> b, std::size_t m, std::size_t dim,
                    std::span<double> out);
void pairwise_hamming(std::span<const std::uint8_t> a, std::size_t n,
                      std::span<const std::uint8_t> b, std::size_t m,
                      std::size_t bytes, std::span<double> out);

}  // namespace parallel

}  // namespace endopoint::kernels
