#include <doctest.h>

#include <cmath>
#include <random>

#include "endopoint/losses.hpp"
#include "endopoint/ops.hpp"
#include "test_util.hpp"

using namespace endopoint;
using testutil::random_tensor;

namespace {

// Per-cell log-softmax cross-entropy, targets derived independently.
double detection_oracle(const Tensor& x, const PseudoLabel& l) {
  const std::size_t hc = x.dim(0), wc = x.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < hc; ++i)
    for (std::size_t j = 0; j < wc; ++j) {
      int target = 64;
      double best = -1;
      for (const ScoredPoint& p : l.points) {
        if (p.y / 8 != static_cast<int>(i) || p.x / 8 != static_cast<int>(j)) continue;
        const int idx = (p.y % 8) * 8 + p.x % 8;
        if (p.score > best || (p.score == best && idx < target)) {
          best = p.score;
          target = idx;
        }
      }
      long double se = 0;
      for (std::size_t k = 0; k < 65; ++k) se += std::exp(static_cast<long double>(x.at(i, j, k)));
      total += static_cast<double>(std::log(se)) - x.at(i, j, target);
    }
  return total / (hc * wc);
}

double descriptor_oracle(const Tensor& a, const Tensor& b, const CorrespondenceTensor& s,
                         const LossConfig& c) {
  const std::size_t hc = a.dim(0), wc = a.dim(1), d = a.dim(2);
  double total = 0;
  for (std::size_t i = 0; i < hc; ++i)
    for (std::size_t j = 0; j < wc; ++j)
      for (std::size_t k = 0; k < hc; ++k)
        for (std::size_t l = 0; l < wc; ++l) {
          double dot = 0;
          for (std::size_t t = 0; t < d; ++t) dot += a.at(i, j, t) * b.at(k, l, t);
          const double sv = s.at(i, j, k, l) ? 1.0 : 0.0;
          total += c.lambda_d * sv * std::max(0.0, c.margin_pos - dot) +
                   (1 - sv) * std::max(0.0, dot - c.margin_neg);
        }
  return total / (hc * wc * hc * wc);
}

// sum(m * heatmap) / (eps + sum(m)) with the heatmap built by hand.
double specular_oracle(const Tensor& x, const Tensor& img, double eps) {
  double num = 0, den = 0;
  for (std::size_t r = 0; r < img.dim(0); ++r)
    for (std::size_t c = 0; c < img.dim(1); ++c) {
      if (!(img.at(r, c) > 0.7)) continue;
      const std::size_t i = r / 8, j = c / 8, k = (r % 8) * 8 + c % 8;
      double m = -1e300, se = 0;
      for (std::size_t t = 0; t < 65; ++t) m = std::max(m, x.at(i, j, t));
      for (std::size_t t = 0; t < 65; ++t) se += std::exp(x.at(i, j, t) - m);
      num += std::exp(x.at(i, j, k) - m) / se;
      den += 1;
    }
  return num / (eps + den);
}

PseudoLabel random_label(std::size_t h, std::size_t w, std::mt19937_64& rng, int n) {
  PseudoLabel l{h, w, {}};
  std::uniform_int_distribution<int> ux(0, static_cast<int>(w) - 1), uy(0, static_cast<int>(h) - 1);
  for (int i = 0; i < n; ++i) l.points.push_back({ux(rng), uy(rng), std::round(std::uniform_real_distribution<double>(0, 4)(rng)) / 4});
  return l;
}

CorrespondenceTensor random_s(std::size_t hc, std::size_t wc, std::mt19937_64& rng) {
  CorrespondenceTensor s(hc, wc);
  for (std::size_t c = 0; c < s.cell_count(); ++c)
    if (rng() % 3) s.set_target(c / wc, c % wc, static_cast<long>(rng() % s.cell_count()));
  return s;
}

}  // namespace

TEST_CASE("detection loss: uniform, confident and random logits") {
  const PseudoLabel empty{16, 24, {}};
  CHECK(std::abs(detection_loss(Tensor({2, 3, 65}, 0.3), empty) - std::log(65.0)) < 1e-9);

  PseudoLabel l{16, 16, {{1, 2, 0.5}, {12, 9, 0.5}}};
  Tensor x({2, 2, 65}, -20.0);
  x.at(0, 0, 2 * 8 + 1) = 20;
  x.at(1, 1, 1 * 8 + 4) = 20;
  x.at(0, 1, 64) = 20;
  x.at(1, 0, 64) = 20;
  CHECK(detection_loss(x, l) < 1e-6);

  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const Tensor r = random_tensor({3, 4, 65}, rng, -4, 4);
    const PseudoLabel rl = random_label(24, 32, rng, 20);
    CHECK(std::abs(detection_loss(r, rl) - detection_oracle(r, rl)) < 1e-10);
  }
  CHECK_THROWS_AS(detection_loss(Tensor({2, 2, 65}), PseudoLabel{16, 24, {}}), ShapeError);
}

TEST_CASE("detection targets: highest score wins, ties row-major") {
  PseudoLabel l{8, 16, {{5, 5, 0.3}, {2, 6, 0.9}, {3, 1, 0.5}, {1, 1, 0.5}, {9, 0, 0.1}}};
  const auto t = detection_targets(l, 1, 2);
  CHECK(t[0] == 6 * 8 + 2);
  CHECK(t[1] == 1);
  PseudoLabel tie{8, 8, {{3, 1, 0.5}, {1, 1, 0.5}}};
  CHECK(detection_targets(tie, 1, 1)[0] == 9);
  CHECK(detection_targets(PseudoLabel{8, 8, {}}, 1, 1)[0] == 64);
}

TEST_CASE("descriptor loss: analytic cases and quadruple-loop oracle") {
  LossConfig cfg;
  // one-hot descriptors: identical on corresponding cells, orthogonal elsewhere
  const std::size_t hc = 2, wc = 2, d = 8;
  Tensor a({hc, wc, d}), b({hc, wc, d});
  CorrespondenceTensor s(hc, wc);
  for (std::size_t c = 0; c < 4; ++c) {
    a[c * d + c] = 1;
    b[c * d + c] = 1;
    s.set_target(c / wc, c % wc, static_cast<long>(c));
  }
  CHECK(descriptor_loss(a, b, s, cfg) == 0.0);

  Tensor neg = b;
  for (double& v : neg.storage()) v = -v;
  // 4 positive pairs each contribute lambda_d * (m_p + 1), over 16 pairs
  CHECK(descriptor_loss(a, neg, s, cfg) == doctest::Approx(4 * 250.0 * 2.0 / 16).epsilon(1e-15));

  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const Tensor ra = ops::l2_normalize(random_tensor({4, 4, 16}, rng));
    const Tensor rb = ops::l2_normalize(random_tensor({4, 4, 16}, rng));
    const CorrespondenceTensor rs = random_s(4, 4, rng);
    CHECK(std::abs(descriptor_loss(ra, rb, rs, cfg) - descriptor_oracle(ra, rb, rs, cfg)) < 1e-10);
  }
}

TEST_CASE("negative subsampling keeps positives and is deterministic") {
  std::mt19937_64 rng(3);
  const Tensor a = ops::l2_normalize(random_tensor({3, 3, 8}, rng));
  const Tensor b = ops::l2_normalize(random_tensor({3, 3, 8}, rng));
  const CorrespondenceTensor s = random_s(3, 3, rng);
  LossConfig cfg;
  cfg.negative_ratio = 0.3;
  cfg.negative_seed = 9;
  CHECK(descriptor_loss(a, b, s, cfg) == descriptor_loss(a, b, s, cfg));
  cfg.negative_ratio = 1e-9;  // positives only
  double pos = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < 9; ++p) {
    if (s.target(p) < 0) continue;
    double dot = 0;
    for (std::size_t k = 0; k < 8; ++k) dot += a[p * 8 + k] * b[s.target(p) * 8 + k];
    pos += 250.0 * std::max(0.0, 1.0 - dot);
    ++n;
  }
  CHECK(descriptor_loss(a, b, s, cfg) == doctest::Approx(pos / n).epsilon(1e-12));
  cfg.negative_ratio = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("specularity loss: analytic cases and masked-mean oracle") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 2, 65}, rng, -3, 3);
  CHECK(specularity_loss(x, Tensor({16, 16}, 0.5), 1e-10) == 0.0);

  // constant logits everywhere: heatmap value 1/65 at every pixel
  const double v = 1.0 / 65;
  const double all = specularity_loss(Tensor({2, 2, 65}, 0.0), Tensor({16, 16}, 0.9), 1e-10);
  CHECK(all == doctest::Approx(256 * v / (1e-10 + 256)).epsilon(1e-14));

  for (int t = 0; t < 100; ++t) {
    const Tensor rx = random_tensor({3, 2, 65}, rng, -5, 5);
    const Tensor img = random_tensor({24, 16}, rng, 0, 1);
    const double got = specularity_loss(rx, img, 1e-10);
    CHECK(std::abs(got - specular_oracle(rx, img, 1e-10)) < 1e-12);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("loss_sp and loss_esp compose their terms") {
  std::mt19937_64 rng(5);
  const Tensor xa = random_tensor({2, 3, 65}, rng, -3, 3), xb = random_tensor({2, 3, 65}, rng, -3, 3);
  const Tensor da = random_tensor({2, 3, 32}, rng), db = random_tensor({2, 3, 32}, rng);
  const PseudoLabel la = random_label(16, 24, rng, 5), lb = random_label(16, 24, rng, 5);
  const CorrespondenceTensor s = random_s(2, 3, rng);
  const Tensor ia = random_tensor({16, 24}, rng, 0, 1), ib = random_tensor({16, 24}, rng, 0, 1);

  auto run = [&](const LossConfig& cfg, bool esp, const Tensor& img_a, const Tensor& img_b) {
    Tape t;
    ViewOutputs a{t.constant(xa), t.constant(da)}, b{t.constant(xb), t.constant(db)};
    LossTerms terms = esp ? loss_esp(img_a, img_b, a, b, la, lb, s, cfg) : loss_sp(a, b, la, lb, s, cfg);
    return std::pair<double, LossTerms>(terms.total.value().item(), terms);
  };

  LossConfig cfg;
  const double sp = run(cfg, false, ia, ib).first;
  const double oracle_sp = detection_oracle(xa, la) + detection_oracle(xb, lb) +
                           cfg.lambda * descriptor_oracle(ops::l2_normalize(da), ops::l2_normalize(db), s, cfg);
  CHECK(std::abs(sp - oracle_sp) < 1e-12);

  LossConfig no_desc = cfg;
  no_desc.lambda = 0;
  CHECK(std::abs(run(no_desc, false, ia, ib).first - detection_oracle(xa, la) - detection_oracle(xb, lb)) < 1e-12);

  const auto [esp, terms] = run(cfg, true, ia, ib);
  const double oracle_esp = oracle_sp + 100 * specular_oracle(xa, ia, 1e-10) + 100 * specular_oracle(xb, ib, 1e-10);
  CHECK(std::abs(esp - oracle_esp) < 1e-10);
  CHECK(terms.specular_a == doctest::Approx(specular_oracle(xa, ia, 1e-10)).epsilon(1e-12));

  LossConfig off = cfg;
  off.lambda_s = 0;
  const auto [esp0, terms0] = run(off, true, ia, ib);
  CHECK(esp0 == sp);  // bit for bit
  CHECK(terms0.specular_a > 0.0);
  const Tensor dark({16, 24}, 0.2);
  CHECK(run(cfg, true, dark, dark).first == sp);
}

TEST_CASE("loss_esp gradients match central differences") {
  std::mt19937_64 rng(6);
  const Tensor ia = random_tensor({16, 16}, rng, 0, 1), ib = random_tensor({16, 16}, rng, 0, 1);
  const PseudoLabel la = random_label(16, 16, rng, 3), lb = random_label(16, 16, rng, 3);
  const CorrespondenceTensor s = random_s(2, 2, rng);
  LossConfig cfg;
  cfg.lambda = 0.05;  // make every term visible in the gradient
  cfg.lambda_d = 2;
  Tensor packed({2 * 4 * 65 + 2 * 4 * 16});
  for (std::size_t i = 0; i < packed.size(); ++i) packed[i] = std::uniform_real_distribution<double>(-1, 1)(rng);

  auto build = [&](Tape& t, Var v) {
    const Tensor& p = v.value();
    auto slice = [&](std::size_t off, const Shape& shape) {
      std::vector<double> d(p.data().begin() + off, p.data().begin() + off + shape_volume(shape));
      return Tensor(shape, std::move(d));
    };
    // unpack through recorded nodes so gradients flow back into `v`
    std::vector<Var> parts;
    std::size_t off = 0;
    for (const Shape& sh : {Shape{2, 2, 65}, Shape{2, 2, 65}, Shape{2, 2, 16}, Shape{2, 2, 16}}) {
      const std::size_t o = off, n = shape_volume(sh);
      parts.push_back(t.record(slice(o, sh), {v}, [v, o, n](const Tensor& g, const Tensor&) {
        Tensor& gv = v.tape().grad_buffer(v);
        for (std::size_t i = 0; i < n; ++i) gv[o + i] += g[i];
      }));
      off += n;
    }
    return loss_esp(ia, ib, {parts[0], parts[2]}, {parts[1], parts[3]}, la, lb, s, cfg).total;
  };
  Tape tape;
  Var v = tape.variable(packed);
  tape.backward(build(tape, v));
  const Tensor numeric = testutil::numeric_gradient(
      [&](const Tensor& x) {
        Tape t;
        return build(t, t.constant(x)).value().item();
      },
      packed);
  CHECK(testutil::relative_error(v.grad(), numeric) < 1e-4);
}
