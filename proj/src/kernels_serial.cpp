#include <bit>

#include "endopoint/kernels.hpp"
#include "endopoint/tensor.hpp"

namespace endopoint::kernels {

ConvGeometry make_conv_geometry(std::size_t height, std::size_t width,
                                std::size_t in_channels,
                                std::size_t out_channels, std::size_t kernel,
                                std::size_t stride, std::size_t padding) {
  if (kernel % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (height + 2 * padding < kernel || width + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  ConvGeometry g;
  g.height = height;
  g.width = width;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.padding = padding;
  g.out_height = (height + 2 * padding - kernel) / stride + 1;
  g.out_width = (width + 2 * padding - kernel) / stride + 1;
  return g;
}

namespace serial {

namespace {

// Input coordinate read by output index `o` and kernel tap `t`, or -1 when it
// falls in the zero padding.
long tap_coord(std::size_t o, std::size_t t, const ConvGeometry& g,
               std::size_t extent) {
  long c = static_cast<long>(o * g.stride + t) - static_cast<long>(g.padding);
  return (c < 0 || c >= static_cast<long>(extent)) ? -1 : c;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t cin = g.in_channels, cout = g.out_channels, k = g.kernel;
  for (std::size_t oy = 0; oy < g.out_height; ++oy) {
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = bias[co];
        for (std::size_t ky = 0; ky < k; ++ky) {
          long iy = tap_coord(oy, ky, g, g.height);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            long ix = tap_coord(ox, kx, g, g.width);
            if (ix < 0) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              acc += input[(iy * g.width + ix) * cin + ci] *
                     kernel[((ky * k + kx) * cin + ci) * cout + co];
            }
          }
        }
        out[(oy * g.out_width + ox) * cout + co] = acc;
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g,
                           std::span<const double> grad_out,
                           std::span<const double> kernel,
                           std::span<double> grad_input) {
  const std::size_t cin = g.in_channels, cout = g.out_channels, k = g.kernel;
  for (std::size_t iy = 0; iy < g.height; ++iy) {
    for (std::size_t ix = 0; ix < g.width; ++ix) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky) {
          long ny = static_cast<long>(iy + g.padding) - static_cast<long>(ky);
          if (ny < 0 || ny % static_cast<long>(g.stride) != 0) continue;
          std::size_t oy = ny / g.stride;
          if (oy >= g.out_height) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            long nx = static_cast<long>(ix + g.padding) - static_cast<long>(kx);
            if (nx < 0 || nx % static_cast<long>(g.stride) != 0) continue;
            std::size_t ox = nx / g.stride;
            if (ox >= g.out_width) continue;
            for (std::size_t co = 0; co < cout; ++co) {
              acc += grad_out[(oy * g.out_width + ox) * cout + co] *
                     kernel[((ky * k + kx) * cin + ci) * cout + co];
            }
          }
        }
        grad_input[(iy * g.width + ix) * cin + ci] = acc;
      }
    }
  }
}

void conv2d_backward_kernel(const ConvGeometry& g,
                            std::span<const double> input,
                            std::span<const double> grad_out,
                            std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  const std::size_t cin = g.in_channels, cout = g.out_channels, k = g.kernel;
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::size_t oy = 0; oy < g.out_height; ++oy) {
            long iy = tap_coord(oy, ky, g, g.height);
            if (iy < 0) continue;
            for (std::size_t ox = 0; ox < g.out_width; ++ox) {
              long ix = tap_coord(ox, kx, g, g.width);
              if (ix < 0) continue;
              acc += input[(iy * g.width + ix) * cin + ci] *
                     grad_out[(oy * g.out_width + ox) * cout + co];
            }
          }
          grad_kernel[((ky * k + kx) * cin + ci) * cout + co] = acc;
        }
      }
    }
  }
  for (std::size_t co = 0; co < cout; ++co) {
    double acc = 0.0;
    for (std::size_t p = 0; p < g.out_height * g.out_width; ++p) {
      acc += grad_out[p * cout + co];
    }
    grad_bias[co] = acc;
  }
}

void pairwise_sq_l2(std::span<const double> a, std::size_t n,
                    std::span<const double> b, std::size_t m, std::size_t dim,
                    std::span<double> out) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        double diff = a[i * dim + d] - b[j * dim + d];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  }
}

void pairwise_hamming(std::span<const std::uint8_t> a, std::size_t n,
                      std::span<const std::uint8_t> b, std::size_t m,
                      std::size_t bytes, std::span<double> out) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      int bits = 0;
      for (std::size_t q = 0; q < bytes; ++q) {
        bits += std::popcount(
            static_cast<unsigned>(a[i * bytes + q] ^ b[j * bytes + q]));
      }
      out[i * m + j] = bits;
    }
  }
}

}  // namespace serial
}  // namespace endopoint::kernels
