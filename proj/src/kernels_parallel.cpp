#include <bit>
#include <vector>

#include "endopoint/kernels.hpp"

namespace endopoint::kernels::parallel {

namespace {

inline long in_coord(std::size_t o, std::size_t t, const ConvGeometry& g) {
  return static_cast<long>(o * g.stride + t) - static_cast<long>(g.padding);
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t cin = g.in_channels, cout = g.out_channels, k = g.kernel;
  const long height = static_cast<long>(g.height);
  const long width = static_cast<long>(g.width);
#pragma omp parallel for schedule(static)
  for (long oy = 0; oy < static_cast<long>(g.out_height); ++oy) {
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      double* acc = &out[(oy * g.out_width + ox) * cout];
      for (std::size_t co = 0; co < cout; ++co) acc[co] = bias[co];
      for (std::size_t ky = 0; ky < k; ++ky) {
        long iy = in_coord(oy, ky, g);
        if (iy < 0 || iy >= height) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          long ix = in_coord(ox, kx, g);
          if (ix < 0 || ix >= width) continue;
          const double* px = &input[(iy * g.width + ix) * cin];
          const double* taps = &kernel[(ky * k + kx) * cin * cout];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = px[ci];
            const double* w = taps + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) acc[co] += v * w[co];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g,
                           std::span<const double> grad_out,
                           std::span<const double> kernel,
                           std::span<double> grad_input) {
  const std::size_t cin = g.in_channels, cout = g.out_channels, k = g.kernel;
  const long stride = static_cast<long>(g.stride);
#pragma omp parallel for schedule(static)
  for (long iy = 0; iy < static_cast<long>(g.height); ++iy) {
    for (std::size_t ix = 0; ix < g.width; ++ix) {
      double* acc = &grad_input[(iy * g.width + ix) * cin];
      for (std::size_t ci = 0; ci < cin; ++ci) acc[ci] = 0.0;
      for (std::size_t ky = 0; ky < k; ++ky) {
        long ny = iy + static_cast<long>(g.padding) - static_cast<long>(ky);
        if (ny < 0 || ny % stride != 0) continue;
        std::size_t oy = ny / stride;
        if (oy >= g.out_height) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          long nx = static_cast<long>(ix + g.padding) - static_cast<long>(kx);
          if (nx < 0 || nx % stride != 0) continue;
          std::size_t ox = nx / stride;
          if (ox >= g.out_width) continue;
          const double* go = &grad_out[(oy * g.out_width + ox) * cout];
          const double* taps = &kernel[(ky * k + kx) * cin * cout];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* w = taps + ci * cout;
            double a = acc[ci];
            for (std::size_t co = 0; co < cout; ++co) a += go[co] * w[co];
            acc[ci] = a;
          }
        }
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
  const long height = static_cast<long>(g.height);
  const long width = static_cast<long>(g.width);
#pragma omp parallel for schedule(dynamic)
  for (long tap = 0; tap < static_cast<long>(k * k); ++tap) {
    const std::size_t ky = tap / k, kx = tap % k;
    double* acc = &grad_kernel[tap * cin * cout];
    for (std::size_t q = 0; q < cin * cout; ++q) acc[q] = 0.0;
    for (std::size_t oy = 0; oy < g.out_height; ++oy) {
      long iy = in_coord(oy, ky, g);
      if (iy < 0 || iy >= height) continue;
      for (std::size_t ox = 0; ox < g.out_width; ++ox) {
        long ix = in_coord(ox, kx, g);
        if (ix < 0 || ix >= width) continue;
        const double* px = &input[(iy * g.width + ix) * cin];
        const double* go = &grad_out[(oy * g.out_width + ox) * cout];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double v = px[ci];
          double* row = acc + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) row[co] += v * go[co];
        }
      }
    }
  }
  std::vector<double> bias_acc(cout, 0.0);
  for (std::size_t p = 0; p < g.out_height * g.out_width; ++p) {
    const double* go = &grad_out[p * cout];
    for (std::size_t co = 0; co < cout; ++co) bias_acc[co] += go[co];
  }
  for (std::size_t co = 0; co < cout; ++co) grad_bias[co] = bias_acc[co];
}

void pairwise_sq_l2(std::span<const double> a, std::size_t n,
                    std::span<const double> b, std::size_t m, std::size_t dim,
                    std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const double* ai = &a[i * dim];
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = &b[j * dim];
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        double diff = ai[d] - bj[d];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  }
}

void pairwise_hamming(std::span<const std::uint8_t> a, std::size_t n,
                      std::span<const std::uint8_t> b, std::size_t m,
                      std::size_t bytes, std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const std::uint8_t* ai = &a[i * bytes];
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint8_t* bj = &b[j * bytes];
      int bits = 0;
      for (std::size_t q = 0; q < bytes; ++q) {
        bits += std::popcount(static_cast<unsigned>(ai[q] ^ bj[q]));
      }
      out[i * m + j] = bits;
    }
  }
}

}  // namespace endopoint::kernels::parallel
