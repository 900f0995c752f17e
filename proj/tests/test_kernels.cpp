#include <doctest.h>

#include <random>
#include <vector>

#include "endopoint/kernels.hpp"

namespace k = endopoint::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Direct definition of a zero-padded strided cross-correlation.
std::vector<double> conv_oracle(const k::ConvGeometry& g, const std::vector<double>& in,
                                const std::vector<double>& ker,
                                const std::vector<double>& bias) {
  std::vector<double> out(g.out_height * g.out_width * g.out_channels);
  for (std::size_t co = 0; co < g.out_channels; ++co)
    for (std::size_t oy = 0; oy < g.out_height; ++oy)
      for (std::size_t ox = 0; ox < g.out_width; ++ox) {
        long double acc = bias[co];
        for (std::size_t ci = 0; ci < g.in_channels; ++ci)
          for (std::size_t ky = 0; ky < g.kernel; ++ky)
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                  ix >= static_cast<long>(g.width))
                continue;
              acc += static_cast<long double>(in[(iy * g.width + ix) * g.in_channels + ci]) *
                     ker[((ky * g.kernel + kx) * g.in_channels + ci) * g.out_channels + co];
            }
        out[(oy * g.out_width + ox) * g.out_channels + co] = static_cast<double>(acc);
      }
  return out;
}

struct Case {
  std::size_t h, w, cin, cout, kernel, stride, pad;
};

const Case kCases[] = {
    {8, 8, 1, 4, 3, 1, 1}, {9, 7, 3, 5, 3, 2, 1}, {6, 10, 4, 2, 1, 1, 0},
    {11, 11, 2, 3, 5, 1, 2}, {7, 5, 3, 3, 3, 2, 0},
};

}  // namespace

TEST_CASE("geometry rejects bad kernels") {
  CHECK_THROWS(k::make_conv_geometry(8, 8, 1, 1, 2, 1, 0));
  CHECK_THROWS(k::make_conv_geometry(8, 8, 1, 1, 3, 0, 0));
  CHECK_THROWS(k::make_conv_geometry(2, 2, 1, 1, 5, 1, 0));
  const auto g = k::make_conv_geometry(9, 7, 1, 1, 3, 2, 1);
  CHECK(g.out_height == 5);
  CHECK(g.out_width == 4);
}

TEST_CASE("conv forward matches the direct oracle") {
  std::mt19937_64 rng(1);
  for (const Case& c : kCases) {
    const auto g = k::make_conv_geometry(c.h, c.w, c.cin, c.cout, c.kernel, c.stride, c.pad);
    const auto in = rand_vec(c.h * c.w * c.cin, rng);
    const auto ker = rand_vec(c.kernel * c.kernel * c.cin * c.cout, rng);
    const auto bias = rand_vec(c.cout, rng);
    const auto expect = conv_oracle(g, in, ker, bias);
    std::vector<double> out(expect.size());
    k::serial::conv2d_forward(g, in, ker, bias, out);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv backward is the adjoint of forward") {
  // <conv(x), g> == <x, dX(g)> + <K, dK(x, g)> contributions, checked
  // separately through bilinearity.
  std::mt19937_64 rng(2);
  for (const Case& c : kCases) {
    const auto g = k::make_conv_geometry(c.h, c.w, c.cin, c.cout, c.kernel, c.stride, c.pad);
    const auto in = rand_vec(c.h * c.w * c.cin, rng);
    const auto ker = rand_vec(c.kernel * c.kernel * c.cin * c.cout, rng);
    const std::vector<double> zero_bias(c.cout, 0.0);
    const auto go = rand_vec(g.out_height * g.out_width * c.cout, rng);
    std::vector<double> out(go.size());
    k::serial::conv2d_forward(g, in, ker, zero_bias, out);
    double lhs = 0;
    for (std::size_t i = 0; i < out.size(); ++i) lhs += out[i] * go[i];

    std::vector<double> gi(in.size()), gk(ker.size()), gb(c.cout);
    k::serial::conv2d_backward_input(g, go, ker, gi);
    k::serial::conv2d_backward_kernel(g, in, go, gk, gb);
    double via_input = 0, via_kernel = 0;
    for (std::size_t i = 0; i < in.size(); ++i) via_input += in[i] * gi[i];
    for (std::size_t i = 0; i < ker.size(); ++i) via_kernel += ker[i] * gk[i];
    CHECK(via_input == doctest::Approx(lhs).epsilon(1e-12));
    CHECK(via_kernel == doctest::Approx(lhs).epsilon(1e-12));
    double gsum = 0;
    for (std::size_t i = 0; i < go.size(); i += c.cout) gsum += go[i];
    CHECK(gb[0] == doctest::Approx(gsum).epsilon(1e-12));
  }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  std::mt19937_64 rng(3);
  for (const Case& c : kCases) {
    const auto g = k::make_conv_geometry(c.h, c.w, c.cin, c.cout, c.kernel, c.stride, c.pad);
    const auto in = rand_vec(c.h * c.w * c.cin, rng);
    const auto ker = rand_vec(c.kernel * c.kernel * c.cin * c.cout, rng);
    const auto bias = rand_vec(c.cout, rng);
    const auto go = rand_vec(g.out_height * g.out_width * c.cout, rng);
    std::vector<double> o1(go.size()), o2(go.size());
    k::serial::conv2d_forward(g, in, ker, bias, o1);
    k::parallel::conv2d_forward(g, in, ker, bias, o2);
    CHECK(o1 == o2);
    std::vector<double> i1(in.size(), 5.0), i2(in.size(), -5.0);
    k::serial::conv2d_backward_input(g, go, ker, i1);
    k::parallel::conv2d_backward_input(g, go, ker, i2);
    CHECK(i1 == i2);
    std::vector<double> k1(ker.size(), 1.0), k2(ker.size()), b1(c.cout, 3.0), b2(c.cout);
    k::serial::conv2d_backward_kernel(g, in, go, k1, b1);
    k::parallel::conv2d_backward_kernel(g, in, go, k2, b2);
    CHECK(k1 == k2);
    CHECK(b1 == b2);
  }
  const std::size_t n = 37, m = 23, dim = 19;
  const auto a = rand_vec(n * dim, rng), b = rand_vec(m * dim, rng);
  std::vector<double> d1(n * m), d2(n * m);
  k::serial::pairwise_sq_l2(a, n, b, m, dim, d1);
  k::parallel::pairwise_sq_l2(a, n, b, m, dim, d2);
  CHECK(d1 == d2);
  std::vector<std::uint8_t> ba(n * 8), bb(m * 8);
  for (auto& x : ba) x = static_cast<std::uint8_t>(rng());
  for (auto& x : bb) x = static_cast<std::uint8_t>(rng());
  k::serial::pairwise_hamming(ba, n, bb, m, 8, d1);
  k::parallel::pairwise_hamming(ba, n, bb, m, 8, d2);
  CHECK(d1 == d2);
}

TEST_CASE("pairwise distances match direct loops") {
  std::mt19937_64 rng(4);
  const std::size_t n = 9, m = 11, dim = 7;
  const auto a = rand_vec(n * dim, rng), b = rand_vec(m * dim, rng);
  std::vector<double> d(n * m);
  k::serial::pairwise_sq_l2(a, n, b, m, dim, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < dim; ++t) s += (a[i * dim + t] - b[j * dim + t]) * (a[i * dim + t] - b[j * dim + t]);
      CHECK(d[i * m + j] == doctest::Approx(s).epsilon(1e-13));
    }
  std::vector<std::uint8_t> ba = {0xFF, 0x00, 0x0F, 0xF0}, bb = {0x00, 0x00, 0xFF, 0xFF, 0x01, 0x80};
  std::vector<double> h(2 * 3);
  k::serial::pairwise_hamming(ba, 2, bb, 3, 2, h);
  CHECK(h == std::vector<double>{8, 8, 8, 8, 8, 6});
}
