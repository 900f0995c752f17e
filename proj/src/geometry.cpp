#include "endopoint/geometry.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "endopoint/rng.hpp"

namespace endopoint {

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
}

RelativePose RelativePose::from(const Eigen::Matrix3d& rotation,
                                const Eigen::Vector3d& translation) {
  const double n = translation.norm();
  if (!(n > 0.0)) throw std::invalid_argument("relative pose: zero translation");
  RelativePose p;
  p.rotation = Eigen::Quaterniond(rotation).normalized();
  p.translation = translation / n;
  return p;
}

const char* model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Homography: return "H";
    case ModelKind::Essential: return "E";
    case ModelKind::Fundamental: return "F";
    case ModelKind::PseudoGT: return "pGT";
  }
  return "?";
}

PointPairs gather_pairs(std::span<const Match> matches, const KeypointSet& a,
                        const KeypointSet& b) {
  PointPairs pairs;
  pairs.a.reserve(matches.size());
  pairs.b.reserve(matches.size());
  for (const Match& m : matches) {
    const Keypoint& ka = a.points.at(m.a);
    const Keypoint& kb = b.points.at(m.b);
    pairs.a.emplace_back(ka.x, ka.y);
    pairs.b.emplace_back(kb.x, kb.y);
  }
  return pairs;
}

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Eigen::Matrix3d hartley_transform(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = s;
  t(1, 1) = s;
  t(0, 2) = -s * centroid.x();
  t(1, 2) = -s * centroid.y();
  return t;
}

Eigen::Vector2d transform(const Eigen::Matrix3d& t, const Eigen::Vector2d& p) {
  return (t * p.homogeneous()).hnormalized();
}

Eigen::VectorXd null_vector(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  return svd.matrixV().col(a.cols() - 1);
}

Eigen::Matrix3d reshape3(const Eigen::VectorXd& v) {
  Eigen::Matrix3d m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

bool nearly_collinear(const Eigen::Vector2d& p, const Eigen::Vector2d& q,
                      const Eigen::Vector2d& r) {
  const Eigen::Vector2d u = q - p, v = r - p;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return std::abs(cross) <= 1e-9 * std::max(1.0, u.norm() * v.norm());
}

bool sample_degenerate(const std::vector<Eigen::Vector2d>& pts) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      for (std::size_t k = j + 1; k < pts.size(); ++k) {
        if (nearly_collinear(pts[i], pts[j], pts[k])) return true;
      }
    }
  }
  return false;
}

bool support_collinear(const std::vector<Eigen::Vector2d>& pts) {
  if (pts.size() < 3) return true;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  return eig.eigenvalues()(0) <= 1e-12 * std::max(1.0, eig.eigenvalues()(1));
}

PointPairs subset(const PointPairs& pairs, std::span<const std::size_t> idx) {
  PointPairs out;
  for (std::size_t i : idx) {
    out.a.push_back(pairs.a[i]);
    out.b.push_back(pairs.b[i]);
  }
  return out;
}

using FitFn = std::function<std::optional<Eigen::Matrix3d>(const PointPairs&)>;
using ErrorFn = std::function<double(const Eigen::Matrix3d&,
                                     const Eigen::Vector2d&,
                                     const Eigen::Vector2d&)>;

std::size_t count_inliers(const Eigen::Matrix3d& model, const PointPairs& pairs,
                          const ErrorFn& error, double threshold,
                          std::vector<std::uint8_t>* flags) {
  std::size_t count = 0;
  if (flags) flags->assign(pairs.size(), 0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double e = error(model, pairs.a[i], pairs.b[i]);
    if (e <= threshold) {
      ++count;
      if (flags) (*flags)[i] = 1;
    }
  }
  return count;
}

std::size_t required_iterations(double confidence, double inlier_ratio,
                                std::size_t sample_size, std::size_t cap) {
  if (inlier_ratio >= 1.0) return 1;
  const double all_good = std::pow(inlier_ratio, static_cast<double>(sample_size));
  if (all_good <= 0.0) return cap;
  const double denom = std::log1p(-all_good);
  if (denom >= 0.0) return cap;
  const double n = std::ceil(std::log1p(-confidence) / denom);
  return n >= static_cast<double>(cap) ? cap : static_cast<std::size_t>(std::max(1.0, n));
}

ModelEstimate run_ransac(const PointPairs& pairs, std::size_t sample_size,
                         const RansacOptions& options, const FitFn& fit_minimal,
                         const FitFn& fit_all, const ErrorFn& error,
                         bool reject_collinear_samples) {
  ModelEstimate est;
  const std::size_t n = pairs.size();
  if (n < sample_size) {
    est.reason = "need at least " + std::to_string(sample_size) +
                 " matches, got " + std::to_string(n);
    est.inliers.assign(n, 0);
    return est;
  }
  std::size_t best_count = 0;
  Eigen::Matrix3d best = Eigen::Matrix3d::Zero();
  std::size_t needed = options.max_iterations;
  std::vector<std::size_t> sample(sample_size);
  std::size_t it = 0;
  for (; it < std::min(needed, options.max_iterations); ++it) {
    std::uint64_t draw = 0;
    for (std::size_t s = 0; s < sample_size; ++s) {
      std::size_t idx;
      do {
        idx = counter_hash(options.seed, it, draw++) % n;
      } while (std::find(sample.begin(), sample.begin() + s, idx) !=
               sample.begin() + s);
      sample[s] = idx;
    }
    const PointPairs minimal = subset(pairs, sample);
    if (reject_collinear_samples &&
        (sample_degenerate(minimal.a) || sample_degenerate(minimal.b))) {
      continue;
    }
    const auto model = fit_minimal(minimal);
    if (!model || !model->allFinite()) continue;
    const std::size_t count =
        count_inliers(*model, pairs, error, options.threshold_px, nullptr);
    if (count > best_count) {
      best_count = count;
      best = *model;
      needed = required_iterations(options.confidence,
                                   static_cast<double>(count) / n, sample_size,
                                   options.max_iterations);
    }
  }
  est.iterations = it;
  if (best_count < sample_size) {
    est.reason = "no consensus set of at least " + std::to_string(sample_size);
    est.inliers.assign(n, 0);
    return est;
  }

  std::vector<std::uint8_t> flags;
  count_inliers(best, pairs, error, options.threshold_px, &flags);
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < n; ++i) {
    if (flags[i]) support.push_back(i);
  }
  if (reject_collinear_samples) {
    const PointPairs inlier_pairs = subset(pairs, support);
    if (support_collinear(inlier_pairs.a) || support_collinear(inlier_pairs.b)) {
      est.reason = "degenerate (collinear) consensus set";
      est.inliers.assign(n, 0);
      return est;
    }
  }
  // Least-squares refits on the consensus set until it stops changing; a
  // refit is kept only when support does not drop.
  for (int round = 0; round < 10; ++round) {
    const auto refit = fit_all(subset(pairs, support));
    if (!refit || !refit->allFinite()) break;
    std::vector<std::uint8_t> refit_flags;
    const std::size_t refit_count =
        count_inliers(*refit, pairs, error, options.threshold_px, &refit_flags);
    if (refit_count < best_count) break;
    best = *refit;
    best_count = refit_count;
    const bool stable = refit_flags == flags;
    flags = std::move(refit_flags);
    if (stable) break;
    support.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (flags[i]) support.push_back(i);
    }
  }
  est.ok = true;
  est.model = best;
  est.inliers = std::move(flags);
  est.inlier_count = best_count;
  return est;
}

double homography_error(const Eigen::Matrix3d& h, const Eigen::Vector2d& a,
                        const Eigen::Vector2d& b) {
  return homography_transfer_error(h, a, b);
}

// Runs `estimate` on canonically ordered pairs and maps flags back.
template <class Estimate>
ModelEstimate canonical(std::span<const Match> matches, const KeypointSet& a,
                        const KeypointSet& b, Estimate&& estimate) {
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (matches[x].a != matches[y].a) return matches[x].a < matches[y].a;
    return matches[x].b < matches[y].b;
  });
  std::vector<Match> sorted;
  sorted.reserve(matches.size());
  for (std::size_t i : order) sorted.push_back(matches[i]);
  ModelEstimate est = estimate(gather_pairs(sorted, a, b));
  std::vector<std::uint8_t> flags(matches.size(), 0);
  for (std::size_t r = 0; r < order.size() && r < est.inliers.size(); ++r) {
    flags[order[r]] = est.inliers[r];
  }
  est.inliers = std::move(flags);
  return est;
}

}  // namespace

Eigen::Matrix3d fit_homography(const PointPairs& pairs) {
  const std::size_t n = pairs.size();
  if (n < 4) throw std::invalid_argument("fit_homography: need >= 4 pairs");
  const Eigen::Matrix3d ta = hartley_transform(pairs.a);
  const Eigen::Matrix3d tb = hartley_transform(pairs.b);
  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d p = transform(ta, pairs.a[i]);
    const Eigen::Vector2d q = transform(tb, pairs.b[i]);
    a.row(2 * i) << -p.x(), -p.y(), -1, 0, 0, 0, q.x() * p.x(), q.x() * p.y(), q.x();
    a.row(2 * i + 1) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
  }
  Eigen::Matrix3d h = tb.inverse() * reshape3(null_vector(a)) * ta;
  if (h(2, 2) != 0.0) h /= h(2, 2);
  return h;
}

Eigen::Matrix3d fit_fundamental(const PointPairs& pairs) {
  const std::size_t n = pairs.size();
  if (n < 8) throw std::invalid_argument("fit_fundamental: need >= 8 pairs");
  const Eigen::Matrix3d ta = hartley_transform(pairs.a);
  const Eigen::Matrix3d tb = hartley_transform(pairs.b);
  Eigen::MatrixXd a(n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d p = transform(ta, pairs.a[i]);
    const Eigen::Vector2d q = transform(tb, pairs.b[i]);
    a.row(i) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(),
        q.y() * p.y(), q.y(), p.x(), p.y(), 1.0;
  }
  Eigen::Matrix3d f = reshape3(null_vector(a));
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0.0;
  f = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  f = tb.transpose() * f * ta;
  return f / f.norm();
}

Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& e) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  const double sigma = 0.5 * (s(0) + s(1));
  return svd.matrixU() * Eigen::Vector3d(sigma, sigma, 0.0).asDiagonal() *
         svd.matrixV().transpose();
}

double homography_transfer_error(const Eigen::Matrix3d& h,
                                 const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b) {
  const Eigen::Vector3d fwd = h * a.homogeneous();
  const Eigen::Vector3d bwd = h.inverse() * b.homogeneous();
  if (fwd.z() == 0.0 || bwd.z() == 0.0) return std::numeric_limits<double>::infinity();
  return std::max((fwd.hnormalized() - b).norm(), (bwd.hnormalized() - a).norm());
}

double epipolar_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                         const Eigen::Vector2d& b) {
  const Eigen::Vector3d ha = a.homogeneous(), hb = b.homogeneous();
  const Eigen::Vector3d line_b = f * ha;             // in image b
  const Eigen::Vector3d line_a = f.transpose() * hb;  // in image a
  const double residual = std::abs(hb.dot(line_b));
  const double nb = line_b.head<2>().norm(), na = line_a.head<2>().norm();
  if (nb == 0.0 || na == 0.0) return std::numeric_limits<double>::infinity();
  return std::max(residual / nb, residual / na);
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d essential_from_pose(const RelativePose& pose) {
  return skew(pose.translation) * pose.rotation_matrix();
}

Eigen::Matrix3d fundamental_from_essential(const Eigen::Matrix3d& e,
                                           const Intrinsics& k) {
  const Eigen::Matrix3d kinv = k.matrix().inverse();
  return kinv.transpose() * e * kinv;
}

ModelEstimate ransac_homography(const PointPairs& pairs,
                                const RansacOptions& options) {
  auto fit = [](const PointPairs& p) -> std::optional<Eigen::Matrix3d> {
    return fit_homography(p);
  };
  return run_ransac(pairs, 4, options, fit, fit, homography_error, true);
}

ModelEstimate ransac_fundamental(const PointPairs& pairs,
                                 const RansacOptions& options) {
  auto fit = [](const PointPairs& p) -> std::optional<Eigen::Matrix3d> {
    return fit_fundamental(p);
  };
  return run_ransac(pairs, 8, options, fit, fit, epipolar_distance, false);
}

ModelEstimate ransac_essential(const PointPairs& pairs, const Intrinsics& k,
                               const RansacOptions& options) {
  k.validate();
  const Eigen::Matrix3d kinv = k.matrix().inverse();
  // Hypotheses are fitted on calibrated coordinates; the inlier test stays in
  // pixels through F = K^-T E K^-1.
  auto fit = [&](const PointPairs& p) -> std::optional<Eigen::Matrix3d> {
    PointPairs calibrated;
    for (std::size_t i = 0; i < p.size(); ++i) {
      calibrated.a.push_back(transform(kinv, p.a[i]));
      calibrated.b.push_back(transform(kinv, p.b[i]));
    }
    return project_to_essential(fit_fundamental(calibrated));
  };
  auto error = [&](const Eigen::Matrix3d& e, const Eigen::Vector2d& a,
                   const Eigen::Vector2d& b) {
    return epipolar_distance(kinv.transpose() * e * kinv, a, b);
  };
  return run_ransac(pairs, 8, options, fit, fit, error, false);
}

ModelEstimate estimate_homography_ransac(std::span<const Match> matches,
                                         const KeypointSet& a,
                                         const KeypointSet& b,
                                         const RansacOptions& options) {
  return canonical(matches, a, b, [&](const PointPairs& p) {
    return ransac_homography(p, options);
  });
}

ModelEstimate estimate_fundamental_ransac(std::span<const Match> matches,
                                          const KeypointSet& a,
                                          const KeypointSet& b,
                                          const RansacOptions& options) {
  return canonical(matches, a, b, [&](const PointPairs& p) {
    return ransac_fundamental(p, options);
  });
}

ModelEstimate estimate_essential_ransac(std::span<const Match> matches,
                                        const KeypointSet& a,
                                        const KeypointSet& b,
                                        const Intrinsics& k,
                                        const RansacOptions& options) {
  return canonical(matches, a, b, [&](const PointPairs& p) {
    return ransac_essential(p, k, options);
  });
}

PoseEstimate recover_pose(const Eigen::Matrix3d& e, const PointPairs& pairs,
                          const Intrinsics& k) {
  k.validate();
  PoseEstimate est;
  if (pairs.size() == 0) {
    est.reason = "no correspondences";
    return est;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2);
  const std::array<std::pair<Eigen::Matrix3d, Eigen::Vector3d>, 4> cands{
      {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}}};

  const Eigen::Matrix3d kinv = k.matrix().inverse();
  std::vector<Eigen::Vector3d> rays_a, rays_b;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rays_a.push_back(kinv * pairs.a[i].homogeneous());
    rays_b.push_back(kinv * pairs.b[i].homogeneous());
  }
  for (std::size_t c = 0; c < 4; ++c) {
    const auto& [r, tc] = cands[c];
    est.candidates[c] = RelativePose::from(r, tc);
    std::size_t front = 0;
    for (std::size_t i = 0; i < rays_a.size(); ++i) {
      // depth_b * x_b = depth_a * R x_a + t, solved in least squares.
      Eigen::Matrix<double, 3, 2> m;
      m.col(0) = r * rays_a[i];
      m.col(1) = -rays_b[i];
      const Eigen::Vector2d depth = m.colPivHouseholderQr().solve(-tc);
      if (depth.allFinite() && depth(0) > 0.0 && depth(1) > 0.0) ++front;
    }
    est.front_counts[c] = front;
  }
  const auto best = std::max_element(est.front_counts.begin(), est.front_counts.end());
  const std::size_t best_count = *best;
  if (std::count(est.front_counts.begin(), est.front_counts.end(), best_count) > 1) {
    est.reason = "cheirality tie: " + std::to_string(est.front_counts[0]) + "/" +
                 std::to_string(est.front_counts[1]) + "/" +
                 std::to_string(est.front_counts[2]) + "/" +
                 std::to_string(est.front_counts[3]);
    return est;
  }
  est.ok = true;
  est.pose = est.candidates[best - est.front_counts.begin()];
  return est;
}

std::vector<std::uint8_t> pgt_inliers(std::span<const Match> matches,
                                      const KeypointSet& a,
                                      const KeypointSet& b,
                                      const RelativePose& pose,
                                      const Intrinsics& k,
                                      double threshold_px) {
  k.validate();
  const Eigen::Matrix3d f = fundamental_from_essential(essential_from_pose(pose), k);
  std::vector<std::uint8_t> flags(matches.size(), 0);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Keypoint& ka = a.points.at(matches[i].a);
    const Keypoint& kb = b.points.at(matches[i].b);
    flags[i] = epipolar_distance(f, {ka.x, ka.y}, {kb.x, kb.y}) <= threshold_px;
  }
  return flags;
}

}  // namespace endopoint
