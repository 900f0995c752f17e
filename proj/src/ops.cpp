#include "endopoint/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "endopoint/kernels.hpp"

namespace endopoint::ops {

namespace {

kernels::ConvGeometry checked_geometry(const Tensor& input,
                                       const Tensor& kernel, const Tensor& bias,
                                       std::size_t stride,
                                       std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  if (kernel.dim(0) != kernel.dim(1)) {
    throw ShapeError("conv2d: kernel must be square, got " +
                     shape_string(kernel.shape()));
  }
  if (kernel.dim(2) != input.dim(2)) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) +
                     " expects " + std::to_string(kernel.dim(2)) +
                     " input channels, input is " +
                     shape_string(input.shape()));
  }
  if (bias.dim(0) != kernel.dim(3)) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) +
                     " does not match kernel " + shape_string(kernel.shape()));
  }
  return kernels::make_conv_geometry(input.dim(0), input.dim(1), input.dim(2),
                                     kernel.dim(3), kernel.dim(0), stride,
                                     padding);
}

void require_channels(const Tensor& x, std::size_t channels, const char* op) {
  require_rank(x, 3, op);
  if (x.dim(2) != channels) {
    throw ShapeError(std::string(op) + ": expected " +
                     std::to_string(channels) + " channels, got " +
                     shape_string(x.shape()));
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  auto g = checked_geometry(input, kernel, bias, stride, padding);
  Tensor out({g.out_height, g.out_width, g.out_channels});
  kernels::parallel::conv2d_forward(g, input.data(), kernel.data(),
                                    bias.data(), out.data());
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor maxpool2(const Tensor& x) {
  require_rank(x, 3, "maxpool2");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial size must be even, got " +
                     shape_string(x.shape()));
  }
  Tensor out({h / 2, w / 2, c});
  for (std::size_t i = 0; i < h / 2; ++i) {
    for (std::size_t j = 0; j < w / 2; ++j) {
      for (std::size_t k = 0; k < c; ++k) {
        out.at(i, j, k) =
            std::max(std::max(x.at(2 * i, 2 * j, k), x.at(2 * i, 2 * j + 1, k)),
                     std::max(x.at(2 * i + 1, 2 * j, k),
                              x.at(2 * i + 1, 2 * j + 1, k)));
      }
    }
  }
  return out;
}

Tensor softmd(const Tensor& x) {
  require_channels(x, kDetectChannels, "softmd");
  Tensor out(x.shape());
  const std::size_t c = kDetectChannels;
  const std::size_t cells = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < cells; ++p) {
    const double* in = &x[p * c];
    double* o = &out[p * c];
    double peak = *std::max_element(in, in + c);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      o[k] = std::exp(in[k] - peak);
      total += o[k];
    }
    for (std::size_t k = 0; k < c; ++k) o[k] /= total;
  }
  return out;
}

Tensor drop_dustbin(const Tensor& x) {
  require_channels(x, kDetectChannels, "drop_dustbin");
  Tensor out({x.dim(0), x.dim(1), kCellChannels});
  const std::size_t cells = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < cells; ++p) {
    std::copy_n(&x[p * kDetectChannels], kCellChannels,
                &out[p * kCellChannels]);
  }
  return out;
}

Tensor d2s(const Tensor& x) {
  require_channels(x, kCellChannels, "d2s");
  const std::size_t hc = x.dim(0), wc = x.dim(1);
  Tensor out({hc * kCell, wc * kCell});
  for (std::size_t i = 0; i < hc; ++i) {
    for (std::size_t j = 0; j < wc; ++j) {
      for (std::size_t c = 0; c < kCellChannels; ++c) {
        out.at(kCell * i + c / kCell, kCell * j + c % kCell) = x.at(i, j, c);
      }
    }
  }
  return out;
}

Tensor space_to_depth(const Tensor& image) {
  require_rank(image, 2, "space_to_depth");
  if (image.dim(0) % kCell != 0 || image.dim(1) % kCell != 0) {
    throw ShapeError("space_to_depth: size must be divisible by 8, got " +
                     shape_string(image.shape()));
  }
  const std::size_t hc = image.dim(0) / kCell, wc = image.dim(1) / kCell;
  Tensor out({hc, wc, kCellChannels});
  for (std::size_t i = 0; i < hc; ++i) {
    for (std::size_t j = 0; j < wc; ++j) {
      for (std::size_t c = 0; c < kCellChannels; ++c) {
        out.at(i, j, c) = image.at(kCell * i + c / kCell, kCell * j + c % kCell);
      }
    }
  }
  return out;
}

CubicTaps cubic_taps(std::size_t out_index, std::size_t factor,
                     std::size_t extent) {
  const double src =
      (static_cast<double>(out_index) + 0.5) / static_cast<double>(factor) -
      0.5;
  const double base = std::floor(src);
  const double t = src - base;
  CubicTaps taps;
  const long last = static_cast<long>(extent) - 1;
  for (int q = 0; q < 4; ++q) {
    long idx = static_cast<long>(base) - 1 + q;
    taps.index[q] = static_cast<std::size_t>(std::clamp(idx, 0L, last));
    taps.weight[q] = cubic_weight(t - (q - 1));
  }
  return taps;
}

void bicubic_sample(const Tensor& x, std::size_t factor, std::size_t out_row,
                    std::size_t out_col, std::span<double> out) {
  const std::size_t c = x.dim(2);
  const CubicTaps ty = cubic_taps(out_row, factor, x.dim(0));
  const CubicTaps tx = cubic_taps(out_col, factor, x.dim(1));
  for (std::size_t k = 0; k < c; ++k) out[k] = 0.0;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      const double w = ty.weight[a] * tx.weight[b];
      const double* src = &x.at(ty.index[a], tx.index[b], 0);
      for (std::size_t k = 0; k < c; ++k) out[k] += w * src[k];
    }
  }
}

Tensor bicubic_upsample(const Tensor& x, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("bicubic_upsample: factor < 1");
  require_rank(x, 3, "bicubic_upsample");
  const std::size_t h = x.dim(0) * factor, w = x.dim(1) * factor;
  const std::size_t c = x.dim(2);
  Tensor out({h, w, c});
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(h); ++r) {
    for (std::size_t q = 0; q < w; ++q) {
      bicubic_sample(x, factor, r, q, out.data().subspan((r * w + q) * c, c));
    }
  }
  return out;
}

Tensor l2_normalize(const Tensor& x) {
  if (x.rank() == 0 || x.empty()) return x;
  const std::size_t d = x.shape().back();
  Tensor out = x;
  for (std::size_t base = 0; base < x.size(); base += d) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += x[base + k] * x[base + k];
    const double norm = std::max(std::sqrt(sq), kNormFloor);
    for (std::size_t k = 0; k < d; ++k) out[base + k] = x[base + k] / norm;
  }
  return out;
}

// ---------------------------------------------------------------- recorded

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride,
           std::size_t padding) {
  Tape& tape = input.tape();
  const auto g = checked_geometry(input.value(), kernel.value(), bias.value(),
                                  stride, padding);
  Tensor out = conv2d(input.value(), kernel.value(), bias.value(), stride,
                      padding);
  return tape.record(
      std::move(out), {input, kernel, bias},
      [=, &tape](const Tensor& grad_out, const Tensor&) {
        if (input.requires_grad()) {
          Tensor gi(input.value().shape());
          kernels::parallel::conv2d_backward_input(g, grad_out.data(),
                                                   kernel.value().data(),
                                                   gi.data());
          add_into(tape.grad_buffer(input), gi);
        }
        if (kernel.requires_grad() || bias.requires_grad()) {
          Tensor gk(kernel.value().shape());
          Tensor gb(bias.value().shape());
          kernels::parallel::conv2d_backward_kernel(
              g, input.value().data(), grad_out.data(), gk.data(), gb.data());
          if (kernel.requires_grad()) add_into(tape.grad_buffer(kernel), gk);
          if (bias.requires_grad()) add_into(tape.grad_buffer(bias), gb);
        }
      });
}

Var relu(Var x) {
  Tape& tape = x.tape();
  return tape.record(relu(x.value()), {x}, [=, &tape](const Tensor& g, const Tensor&) {
    Tensor& gx = tape.grad_buffer(x);
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var maxpool2(Var x) {
  Tape& tape = x.tape();
  return tape.record(maxpool2(x.value()), {x}, [=, &tape](const Tensor& g, const Tensor&) {
    const Tensor& in = x.value();
    Tensor& gx = tape.grad_buffer(x);
    const std::size_t c = in.dim(2);
    for (std::size_t i = 0; i < g.dim(0); ++i) {
      for (std::size_t j = 0; j < g.dim(1); ++j) {
        for (std::size_t k = 0; k < c; ++k) {
          // First maximum in row-major window order receives the gradient.
          std::size_t br = 2 * i, bc = 2 * j;
          for (std::size_t dr = 0; dr < 2; ++dr) {
            for (std::size_t dc = 0; dc < 2; ++dc) {
              if (in.at(2 * i + dr, 2 * j + dc, k) > in.at(br, bc, k)) {
                br = 2 * i + dr;
                bc = 2 * j + dc;
              }
            }
          }
          gx.at(br, bc, k) += g.at(i, j, k);
        }
      }
    }
  });
}

Var softmd(Var x) {
  Tape& tape = x.tape();
  return tape.record(softmd(x.value()), {x},
                     [=, &tape](const Tensor& g, const Tensor& y) {
    Tensor& gx = tape.grad_buffer(x);
    const std::size_t c = kDetectChannels;
    for (std::size_t base = 0; base < y.size(); base += c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += g[base + k] * y[base + k];
      for (std::size_t k = 0; k < c; ++k) {
        gx[base + k] += y[base + k] * (g[base + k] - dot);
      }
    }
  });
}

Var drop_dustbin(Var x) {
  Tape& tape = x.tape();
  return tape.record(drop_dustbin(x.value()), {x},
                     [=, &tape](const Tensor& g, const Tensor&) {
                       Tensor& gx = tape.grad_buffer(x);
                       const std::size_t cells = g.size() / kCellChannels;
                       for (std::size_t p = 0; p < cells; ++p) {
                         for (std::size_t k = 0; k < kCellChannels; ++k) {
                           gx[p * kDetectChannels + k] +=
                               g[p * kCellChannels + k];
                         }
                       }
                     });
}

Var d2s(Var x) {
  Tape& tape = x.tape();
  return tape.record(d2s(x.value()), {x}, [=, &tape](const Tensor& g, const Tensor&) {
    add_into(tape.grad_buffer(x), space_to_depth(g));
  });
}

Var bicubic_upsample(Var x, std::size_t factor) {
  Tape& tape = x.tape();
  return tape.record(
      bicubic_upsample(x.value(), factor), {x}, [=, &tape](const Tensor& g, const Tensor&) {
        Tensor& gx = tape.grad_buffer(x);
        const Tensor& in = x.value();
        const std::size_t c = in.dim(2);
        for (std::size_t r = 0; r < g.dim(0); ++r) {
          const CubicTaps ty = cubic_taps(r, factor, in.dim(0));
          for (std::size_t q = 0; q < g.dim(1); ++q) {
            const CubicTaps tx = cubic_taps(q, factor, in.dim(1));
            const double* go = &g.at(r, q, 0);
            for (int a = 0; a < 4; ++a) {
              for (int b = 0; b < 4; ++b) {
                const double w = ty.weight[a] * tx.weight[b];
                double* dst = &gx.at(ty.index[a], tx.index[b], 0);
                for (std::size_t k = 0; k < c; ++k) dst[k] += w * go[k];
              }
            }
          }
        }
      });
}

Var l2_normalize(Var x) {
  Tape& tape = x.tape();
  return tape.record(l2_normalize(x.value()), {x},
                     [=, &tape](const Tensor& g, const Tensor& y) {
    const Tensor& in = x.value();
    Tensor& gx = tape.grad_buffer(x);
    const std::size_t d = in.shape().back();
    for (std::size_t base = 0; base < in.size(); base += d) {
      double sq = 0.0, dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        sq += in[base + k] * in[base + k];
        dot += y[base + k] * g[base + k];
      }
      const double norm = std::sqrt(sq);
      if (norm > kNormFloor) {
        for (std::size_t k = 0; k < d; ++k) {
          gx[base + k] += (g[base + k] - y[base + k] * dot) / norm;
        }
      } else {
        for (std::size_t k = 0; k < d; ++k) gx[base + k] += g[base + k] / kNormFloor;
      }
    }
  });
}

Var sum(Var x) {
  Tape& tape = x.tape();
  return tape.record(Tensor::scalar(x.value().sum()), {x},
                     [=, &tape](const Tensor& g, const Tensor&) {
                       Tensor& gx = tape.grad_buffer(x);
                       for (double& v : gx.storage()) v += g[0];
                     });
}

Var add(Var a, Var b) {
  Tape& tape = a.tape();
  if (a.value().shape() != b.value().shape()) {
    throw ShapeError("add: " + shape_string(a.value().shape()) + " vs " +
                     shape_string(b.value().shape()));
  }
  Tensor out = a.value();
  add_into(out, b.value());
  return tape.record(std::move(out), {a, b}, [=, &tape](const Tensor& g, const Tensor&) {
    if (a.requires_grad()) add_into(tape.grad_buffer(a), g);
    if (b.requires_grad()) add_into(tape.grad_buffer(b), g);
  });
}

Var scale(Var x, double factor) {
  Tape& tape = x.tape();
  Tensor out = x.value();
  for (double& v : out.storage()) v *= factor;
  return tape.record(std::move(out), {x}, [=, &tape](const Tensor& g, const Tensor&) {
    Tensor& gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

}  // namespace endopoint::ops
