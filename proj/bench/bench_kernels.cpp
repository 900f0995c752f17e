// Serial reference vs OpenMP kernels on network-sized problems.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "endopoint/kernels.hpp"

namespace k = endopoint::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

struct ConvCase {
  k::ConvGeometry g;
  std::vector<double> input, kernel, bias, out;
};

ConvCase conv_case(const benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto ch = static_cast<std::size_t>(state.range(1));
  ConvCase c;
  c.g = k::make_conv_geometry(side, side, ch, ch, 3, 1, 1);
  c.input = random_vec(side * side * ch, 1);
  c.kernel = random_vec(9 * ch * ch, 2);
  c.bias = random_vec(ch, 3);
  c.out.resize(c.g.out_height * c.g.out_width * ch);
  return c;
}

template <auto Fn>
void BM_conv_forward(benchmark::State& state) {
  ConvCase c = conv_case(state);
  for (auto _ : state) {
    Fn(c.g, c.input, c.kernel, c.bias, c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
}

template <auto Fn>
void BM_conv_backward_kernel(benchmark::State& state) {
  ConvCase c = conv_case(state);
  std::vector<double> gk(c.kernel.size()), gb(c.bias.size());
  for (auto _ : state) {
    Fn(c.g, c.input, c.out, gk, gb);
    benchmark::DoNotOptimize(gk.data());
  }
}

template <auto Fn>
void BM_pairwise_l2(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 256;
  const auto a = random_vec(n * dim, 4), b = random_vec(n * dim, 5);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    Fn(a, n, b, n, dim, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_conv_forward<k::serial::conv2d_forward>)->Args({64, 32})->Args({120, 64});
BENCHMARK(BM_conv_forward<k::parallel::conv2d_forward>)->Args({64, 32})->Args({120, 64});
BENCHMARK(BM_conv_backward_kernel<k::serial::conv2d_backward_kernel>)->Args({64, 32});
BENCHMARK(BM_conv_backward_kernel<k::parallel::conv2d_backward_kernel>)->Args({64, 32});
BENCHMARK(BM_pairwise_l2<k::serial::pairwise_sq_l2>)->Arg(1000);
BENCHMARK(BM_pairwise_l2<k::parallel::pairwise_sq_l2>)->Arg(1000);

BENCHMARK_MAIN();
