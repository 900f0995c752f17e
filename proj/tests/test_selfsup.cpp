#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "endopoint/file_util.hpp"
#include "endopoint/image_io.hpp"
#include "endopoint/network.hpp"
#include "endopoint/peaks.hpp"
#include "endopoint/selfsup.hpp"
#include "test_util.hpp"

using namespace endopoint;
using testutil::random_tensor;

namespace {

// Visit every candidate by descending score (ties by row, column) and keep
// it when no kept point is within the Chebyshev radius.
std::vector<ScoredPoint> greedy_oracle(const Tensor& s, const Tensor* mask, double thr,
                                       std::size_t window, std::size_t max_count) {
  std::vector<ScoredPoint> cand;
  for (std::size_t r = 0; r < s.dim(0); ++r)
    for (std::size_t c = 0; c < s.dim(1); ++c) {
      if (mask && mask->at(r, c) == 0.0) continue;
      const double v = s.at(r, c);
      if (v >= thr && v > 0) cand.push_back({static_cast<int>(c), static_cast<int>(r), v});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const ScoredPoint& a, const ScoredPoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  const int rad = static_cast<int>(window / 2);
  std::vector<ScoredPoint> kept;
  for (const ScoredPoint& p : cand) {
    if (kept.size() == max_count) break;
    bool clear = true;
    for (const ScoredPoint& k : kept)
      if (std::abs(k.x - p.x) <= rad && std::abs(k.y - p.y) <= rad) clear = false;
    if (clear) kept.push_back(p);
  }
  return kept;
}

CorrespondenceTensor brute_force_s(const Homography& h, std::size_t H, std::size_t W) {
  const std::size_t hc = H / 8, wc = W / 8;
  CorrespondenceTensor s(hc, wc);
  for (std::size_t i = 0; i < hc; ++i)
    for (std::size_t j = 0; j < wc; ++j) {
      const Eigen::Vector3d q = h.matrix * Eigen::Vector3d(8.0 * j + 3.5, 8.0 * i + 3.5, 1.0);
      const double x = q.x() / q.z(), y = q.y() / q.z();
      double best = 1e300;
      long arg = -1;
      for (std::size_t k = 0; k < hc; ++k)
        for (std::size_t l = 0; l < wc; ++l) {
          const double d = std::hypot(x - (8.0 * l + 3.5), y - (8.0 * k + 3.5));
          if (d < best) {
            best = d;
            arg = static_cast<long>(k * wc + l);
          }
        }
      if (best <= 8.0) s.set_target(i, j, arg);
    }
  return s;
}

Tensor smooth_image(std::size_t h, std::size_t w) {
  Tensor img({h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      img.at(r, c) = 0.5 + 0.25 * std::sin(0.21 * c + 0.05 * r) + 0.2 * std::cos(0.13 * r - 0.07 * c);
  return img;
}

}  // namespace

TEST_CASE("zero amplitudes give the identity, translation only the last column") {
  const HomographyConfig zero{0, 0, 0, 0};
  CHECK(sample_homography(5, zero).matrix == Eigen::Matrix3d::Identity());
  const HomographyConfig shift{0, 0, 0, 0.1};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::Matrix3d m = sample_homography(seed, shift).matrix;
    CHECK(m.block<2, 2>(0, 0).isApprox(Eigen::Matrix2d::Identity(), 1e-15));
    CHECK(m.row(2).isApprox(Eigen::RowVector3d(0, 0, 1), 1e-15));
    CHECK(std::abs(m(0, 2)) <= 0.1 + 1e-15);
    CHECK(std::abs(m(1, 2)) <= 0.1 + 1e-15);
  }
}

TEST_CASE("10k sampled homographies are invertible and keep the corners in the box") {
  const HomographyConfig cfg;
  std::size_t bad = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const Homography h = sample_homography(seed, cfg);
    if (!(std::abs(h.determinant()) > 1e-12)) ++bad;
    for (double x : {0.0, 1.0})
      for (double y : {0.0, 1.0}) {
        const Eigen::Vector3d q = h.matrix * Eigen::Vector3d(x, y, 1);
        if (!(q.z() > 0)) ++bad;
        const double u = q.x() / q.z(), v = q.y() / q.z();
        if (u < -0.2 || u > 1.2 || v < -0.2 || v > 1.2) ++bad;
      }
  }
  CHECK(bad == 0);
  // determinism
  CHECK(sample_homography(42, cfg).matrix == sample_homography(42, cfg).matrix);
}

TEST_CASE("sampling with impossible amplitudes gives up") {
  CHECK_THROWS(sample_homography(1, HomographyConfig{0, 0, 0, 5.0}));
}

TEST_CASE("pixel frame conjugation maps corners consistently") {
  const Homography u = sample_homography(3, {});
  const Homography p = to_pixel_frame(u, 48, 64);
  const Eigen::Vector2d a = u.apply({0.25, 0.75});
  const Eigen::Vector2d b = p.apply({0.25 * 64, 0.75 * 48});
  CHECK(b.x() == doctest::Approx(a.x() * 64).epsilon(1e-12));
  CHECK(b.y() == doctest::Approx(a.y() * 48).epsilon(1e-12));
}

TEST_CASE("warp: identity, integer shift and round trip") {
  std::mt19937_64 rng(1);
  const Tensor img = random_tensor({16, 24}, rng, 0, 1);
  CHECK(warp_image(img, Homography::identity()) == img);

  const Tensor shifted = warp_image(img, Homography::translation(5, 0));
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 24; ++c) CHECK(shifted.at(r, c) == (c < 5 ? 0.0 : img.at(r, c - 5)));

  const Tensor smooth = smooth_image(96, 128);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Homography h = to_pixel_frame(sample_homography(seed, {0.02, 0.1, 10, 0.05}), 96, 128);
    const Tensor back = warp_image(warp_image(smooth, h), h.inverse());
    double se = 0;
    std::size_t n = 0;
    for (std::size_t r = 24; r < 72; ++r)
      for (std::size_t c = 32; c < 96; ++c) {
        // only pixels whose forward image stays in frame
        const Eigen::Vector2d q = h.apply({double(c), double(r)});
        if (q.x() < 1 || q.y() < 1 || q.x() > 126 || q.y() > 94) continue;
        se += (back.at(r, c) - smooth.at(r, c)) * (back.at(r, c) - smooth.at(r, c));
        ++n;
      }
    REQUIRE(n > 1000);
    const double psnr = 10 * std::log10(1.0 / (se / n));
    CHECK(psnr > 35.0);
  }
}

TEST_CASE("correspondence tensor: identity, shift, brute force") {
  const CorrespondenceTensor id = correspondence_tensor(Homography::identity(), 32, 48);
  const Tensor d = id.dense();
  CHECK(d.sum() == 24.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(d[((i * 6 + j) * 4 + i) * 6 + j] == 1.0);

  const CorrespondenceTensor sh = correspondence_tensor(Homography::translation(8, 0), 32, 48);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j + 1 < 6; ++j) CHECK(sh.at(i, j, i, j + 1));

  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Homography h = to_pixel_frame(sample_homography(seed, {}), 64, 80);
    const CorrespondenceTensor s = correspondence_tensor(h, 64, 80);
    const CorrespondenceTensor o = brute_force_s(h, 64, 80);
    for (std::size_t c = 0; c < s.cell_count(); ++c) REQUIRE(s.target(c) == o.target(c));
  }
  CHECK_THROWS_AS(correspondence_tensor(Homography::identity(), 30, 48), ShapeError);
}

TEST_CASE("select_peaks equals the greedy suppression oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s = random_tensor({24, 32}, rng, 0, 0.05);
    // quantise to provoke ties
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::round(s[i] * 400) / 400;
    const Tensor mask = random_tensor({24, 32}, rng, 0, 1);
    Tensor bin = mask;
    for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = mask[i] > 0.2 ? 1.0 : 0.0;
    const std::size_t window = (trial % 3) * 2 + 3;
    const std::size_t cap = trial % 2 ? 15 : 1000;
    CHECK(select_peaks(s, nullptr, 0.015, window, cap) == greedy_oracle(s, nullptr, 0.015, window, cap));
    CHECK(select_peaks(s, &bin, 0.015, window, cap) == greedy_oracle(s, &bin, 0.015, window, cap));
  }
  CHECK_THROWS(select_peaks(Tensor({4, 4}), nullptr, 0.1, 4, 10));
}

TEST_CASE("pseudo-labels from heatmaps") {
  Tensor dark({16, 16}, 0.01);
  CHECK(pseudolabel_from_heatmap(dark, nullptr).points.empty());

  Tensor one = dark;
  one.at(5, 9) = 0.5;
  const PseudoLabel l = pseudolabel_from_heatmap(one, nullptr);
  REQUIRE(l.points.size() == 1);
  CHECK(l.points[0].x == 9);
  CHECK(l.points[0].y == 5);
  CHECK(l.map().sum() == 1.0);
  CHECK(l.map().at(5, 9) == 1.0);

  std::mt19937_64 rng(3);
  const Tensor heat = random_tensor({64, 64}, rng, 0, 0.2);
  const PseudoLabel r = pseudolabel_from_heatmap(heat, nullptr);
  CHECK(r.points == greedy_oracle(heat, nullptr, 0.015, 9, 600));
  const Tensor dense = random_tensor({256, 256}, rng, 0.1, 1.0);
  const PseudoLabel capped = pseudolabel_from_heatmap(dense, nullptr);
  CHECK(capped.points.size() == 600);
  for (std::size_t a = 0; a < capped.points.size(); ++a)
    for (std::size_t b = a + 1; b < capped.points.size(); ++b)
      CHECK_FALSE((std::abs(capped.points[a].x - capped.points[b].x) <= 4 &&
                   std::abs(capped.points[a].y - capped.points[b].y) <= 4));

  // the teacher path is heatmap extraction on the network output
  const auto teacher = NetworkParams::initialize(Architecture::toy(), 1);
  const Tensor img = random_tensor({16, 24}, rng, 0, 1);
  const PseudoLabel t = generate_pseudolabels(teacher, img, nullptr, {0.0, 3, 100});
  CHECK(t.points == pseudolabel_from_heatmap(densify(forward(teacher, img)).heatmap, nullptr, {0.0, 3, 100}).points);
}

TEST_CASE("warp_label rounds and drops points that leave the frame") {
  PseudoLabel l{16, 16, {{3, 4, 0.5}, {14, 2, 0.3}}};
  const PseudoLabel w = warp_label(l, Homography::translation(1.4, 2.6));
  REQUIRE(w.points.size() == 2);
  CHECK(w.points[0].x == 4);
  CHECK(w.points[0].y == 7);
  const PseudoLabel gone = warp_label(l, Homography::translation(2, 0));
  CHECK(gone.points.size() == 1);
}

TEST_CASE("specularity mask is a strict threshold") {
  Tensor img({1, 4}, std::vector<double>{0.8, 0.7, 0.70000001, 0.2});
  const Tensor m = specularity_mask(img);
  CHECK(m == Tensor({1, 4}, std::vector<double>{1, 0, 1, 0}));
  CHECK(specularity_mask(Tensor({4, 4}, 0.1)).sum() == 0.0);
  std::mt19937_64 rng(4);
  const Tensor r = random_tensor({20, 20}, rng, 0, 1);
  const Tensor rm = specularity_mask(r);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(rm[i] == (r[i] > 0.7 ? 1.0 : 0.0));
}

TEST_CASE("frame ingestion and label cache") {
  testutil::TempDir dir("frames");
  std::mt19937_64 rng(5);
  for (int id : {7, 2, 11}) write_pgm(dir.path / frame_filename(id), random_tensor({16, 16}, rng, 0, 1));
  write_pgm(dir.path / frame_filename(3), random_tensor({8, 16}, rng, 0, 1));
  write_file_atomic(dir.path / frame_filename(4), "garbage");
  write_file_atomic(dir.path / "notes.txt", "ignored");
  Tensor roi({16, 16}, 1.0);
  for (std::size_t r = 0; r < 16; ++r) roi.at(r, 0) = 0.0;
  write_pgm(dir.path / "roi.pgm", roi);

  CHECK(frame_filename(12) == "frame_000012.pgm");
  CHECK(parse_frame_id("frame_000012.pgm") == 12);
  CHECK_FALSE(parse_frame_id("frame_000012.txt").has_value());
  CHECK_FALSE(parse_frame_id("img_000012.pgm").has_value());

  const FrameSet plain = ingest_frames(dir.path, std::nullopt);
  REQUIRE(plain.frames.size() == 4);
  CHECK(plain.frames[0].id == 2);
  CHECK(plain.frames[3].id == 11);
  CHECK(plain.errors.size() == 1);

  const FrameSet masked = ingest_frames(dir.path, dir.path / "roi.pgm");
  CHECK(masked.frames.size() == 3);
  CHECK(masked.errors.size() == 2);  // size mismatch and unreadable
  CHECK(masked.frames[0].roi.at(3, 0) == 0.0);
  CHECK(masked.frames[0].roi.at(3, 1) == 1.0);
  CHECK_THROWS(ingest_frames(dir.path, dir.path / "missing.pgm"));

  PseudoLabel l{16, 16, {{3, 4, 0.5}, {14, 2, 0.25}}};
  write_label_file(dir.path / "labels" / frame_filename(2, ".txt"), l);
  const PseudoLabel back = read_label_file(dir.path / "labels" / frame_filename(2, ".txt"), 16, 16);
  CHECK(back.points == l.points);
  write_file_atomic(dir.path / "bad.txt", "3 4\n");
  CHECK_THROWS(read_label_file(dir.path / "bad.txt", 16, 16));
  write_file_atomic(dir.path / "oob.txt", "30 4 0.5\n");
  CHECK_THROWS(read_label_file(dir.path / "oob.txt", 16, 16));
}
