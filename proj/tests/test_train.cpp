#include <doctest.h>

#include <cmath>
#include <random>

#include "endopoint/train.hpp"
#include "test_util.hpp"

using namespace endopoint;
using testutil::random_tensor;

namespace {

// Textured image with a bright square and labels on a few corners.
TrainingSample synthetic_sample(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  TrainingSample s;
  s.image = random_tensor({h, w}, rng, 0.05, 0.6);
  for (std::size_t r = h / 4; r < h / 2; ++r)
    for (std::size_t c = w / 4; c < w / 2; ++c) s.image.at(r, c) = 0.9;
  s.label = {h, w, {}};
  for (std::size_t r = 3; r < h; r += 8)
    for (std::size_t c = 5; c < w; c += 8)
      s.label.points.push_back({static_cast<int>(c), static_cast<int>(r), 0.5});
  return s;
}

double mean(const std::vector<LossRecord>& h, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += h[i].total;
  return s / (to - from);
}

}  // namespace

TEST_CASE("full L_ESP parameter gradients match central differences") {
  std::mt19937_64 rng(1);
  NetworkParams params = NetworkParams::initialize(Architecture::toy(), 5);
  // zero biases put ReLU exactly on its kink wherever the warp fills zeros
  for (ConvLayer& l : params.layers) l.bias = random_tensor(l.bias.shape(), rng, -0.05, 0.05);
  std::vector<TrainingSample> batch{synthetic_sample(16, 16, rng), synthetic_sample(16, 16, rng)};
  const std::vector<Homography> warps{
      to_pixel_frame(sample_homography(3, {}), 16, 16),
      to_pixel_frame(sample_homography(4, {}), 16, 16)};
  LossConfig cfg;
  cfg.lambda = 0.01;
  cfg.lambda_d = 5;
  const BatchGradient g = batch_gradient(params, batch, warps, cfg);
  CHECK(g.loss.total == doctest::Approx(batch_loss(params, batch, warps, cfg)).epsilon(1e-14));
  CHECK(g.loss.specularity > 0.0);

  const double h = 1e-6;
  double worst = 0;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    for (int which = 0; which < 2; ++which) {
      const Tensor& analytic = g.grads[2 * l + which];
      const std::size_t n = analytic.size();
      for (std::size_t s = 0; s < 6; ++s) {
        const std::size_t i = (s * 7919 + l * 31) % n;
        NetworkParams p = params;
        Tensor& t = which ? p.layers[l].bias : p.layers[l].kernel;
        const double keep = t[i];
        t[i] = keep + h;
        const double up = batch_loss(p, batch, warps, cfg);
        t[i] = keep - h;
        const double down = batch_loss(p, batch, warps, cfg);
        const double numeric = (up - down) / (2 * h);
        const double a = analytic[i];
        worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        ++checked;
      }
    }
  CHECK(checked == 144);
  CHECK(worst < 1e-4);
}

TEST_CASE("one iteration at learning rate 0 leaves parameters bit-identical") {
  std::mt19937_64 rng(2);
  const NetworkParams p = NetworkParams::initialize(Architecture::toy(), 1);
  std::vector<TrainingSample> data{synthetic_sample(16, 16, rng)};
  TrainConfig cfg;
  cfg.iterations = 1;
  cfg.learning_rate = 0.0;
  const TrainResult r = finetune(p, data, cfg, LossConfig{});
  CHECK(r.params == p);
  CHECK(r.history.size() == 1);
  CHECK(r.optimizer.step == 1);
}

TEST_CASE("training is deterministic in the seed") {
  std::mt19937_64 rng(3);
  const NetworkParams p = NetworkParams::initialize(Architecture::toy(), 1);
  std::vector<TrainingSample> data{synthetic_sample(16, 24, rng), synthetic_sample(16, 24, rng)};
  TrainConfig cfg;
  cfg.iterations = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 17;
  const TrainResult a = finetune(p, data, cfg, LossConfig{});
  const TrainResult b = finetune(p, data, cfg, LossConfig{});
  CHECK(a.params == b.params);
  REQUIRE(a.history.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.history[i].total == b.history[i].total);
  cfg.seed = 18;
  const TrainResult c = finetune(p, data, cfg, LossConfig{});
  CHECK_FALSE(c.params == a.params);
}

TEST_CASE("smoke training: loss trends down on a single image") {
  std::mt19937_64 rng(4);
  const NetworkParams p = NetworkParams::initialize(Architecture::toy(), 2);
  std::vector<TrainingSample> data{synthetic_sample(32, 32, rng)};
  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;
  const TrainResult r = finetune(p, data, cfg, LossConfig{});
  CHECK(mean(r.history, 180, 200) < mean(r.history, 0, 20));
}

TEST_CASE("checkpoints follow the cadence and failures abort") {
  std::mt19937_64 rng(5);
  NetworkParams p = NetworkParams::initialize(Architecture::toy(), 1);
  std::vector<TrainingSample> data{synthetic_sample(16, 16, rng)};
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.checkpoint_every = 2;
  cfg.learning_rate = 1e-4;
  std::vector<std::size_t> seen;
  finetune(p, data, cfg, LossConfig{}, [&](std::size_t it, const NetworkParams&, const AdamState& s) {
    seen.push_back(it);
    CHECK(s.step == it);
  });
  CHECK(seen == std::vector<std::size_t>{2, 4, 5});

  CHECK_THROWS_AS(finetune(p, {}, cfg, LossConfig{}), std::invalid_argument);
  TrainConfig zero = cfg;
  zero.iterations = 0;
  CHECK_THROWS(finetune(p, data, zero, LossConfig{}));

  p.layers[9].bias[0] = std::nan("");
  try {
    finetune(p, data, cfg, LossConfig{});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.iteration() == 0);
  }
}

TEST_CASE("optimizer state sidecar round-trips") {
  std::mt19937_64 rng(6);
  const NetworkParams p = NetworkParams::initialize(Architecture::toy(), 1);
  std::vector<TrainingSample> data{synthetic_sample(16, 16, rng)};
  TrainConfig cfg;
  cfg.iterations = 2;
  cfg.learning_rate = 1e-4;
  const TrainResult r = finetune(p, data, cfg, LossConfig{});
  testutil::TempDir dir("state");
  write_optimizer_state(dir.path / "s.state", r.optimizer, 2);
  std::size_t it = 0;
  const AdamState back = read_optimizer_state(dir.path / "s.state", r.params, &it);
  CHECK(it == 2);
  CHECK(back == r.optimizer);
}
