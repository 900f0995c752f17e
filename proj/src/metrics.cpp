#include "endopoint/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "endopoint/file_util.hpp"
#include "endopoint/rng.hpp"
#include "endopoint/selfsup.hpp"

namespace endopoint {

double grid_coverage(std::span<const Eigen::Vector2d> points,
                     std::size_t height, std::size_t width) {
  const std::size_t cell_w = std::max<std::size_t>(1, width / kCoverageGrid);
  const std::size_t cell_h = std::max<std::size_t>(1, height / kCoverageGrid);
  std::array<bool, kCoverageGrid * kCoverageGrid> hit{};
  for (const Eigen::Vector2d& p : points) {
    const auto x = static_cast<std::size_t>(std::max(0.0, std::floor(p.x())));
    const auto y = static_cast<std::size_t>(std::max(0.0, std::floor(p.y())));
    const std::size_t col = std::min(kCoverageGrid - 1, x / cell_w);
    const std::size_t row = std::min(kCoverageGrid - 1, y / cell_h);
    hit[row * kCoverageGrid + col] = true;
  }
  const auto cells = std::count(hit.begin(), hit.end(), true);
  return 100.0 * static_cast<double>(cells) /
         static_cast<double>(kCoverageGrid * kCoverageGrid);
}

double rotation_error_deg(const RelativePose& estimate,
                          const RelativePose& truth) {
  const Eigen::Matrix3d r =
      estimate.rotation_matrix() * truth.rotation_matrix().transpose();
  // atan2 of the sine and cosine parts of R; equal to
  // acos((trace - 1) / 2) but well conditioned near 0 and 180 degrees.
  const double cos_part = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0),
                             r(1, 0) - r(0, 1));
  const double sin_part = 0.5 * axis.norm();
  return std::atan2(sin_part, cos_part) * 180.0 / std::numbers::pi;
}

std::size_t rotation_bucket(double error_deg) {
  if (error_deg < 5.0) return 0;
  if (error_deg < 10.0) return 1;
  if (error_deg <= kRotationFailureDeg) return 2;
  return 3;
}

double AblationCount::percentage() const {
  if (all == 0) return 100.0;
  return 100.0 * static_cast<double>(without_s) / static_cast<double>(all);
}

namespace {

bool on_mask(const Tensor& mask, const Keypoint& k) {
  const long r = std::lround(k.y), c = std::lround(k.x);
  if (r < 0 || c < 0 || r >= static_cast<long>(mask.dim(0)) ||
      c >= static_cast<long>(mask.dim(1))) {
    return false;
  }
  return mask.at(r, c) != 0.0;
}

}  // namespace

AblationCount feature_ablation(const KeypointSet& keypoints,
                               const Tensor& specular_mask) {
  AblationCount c;
  for (const Keypoint& k : keypoints.points) {
    ++c.all;
    if (!on_mask(specular_mask, k)) ++c.without_s;
  }
  return c;
}

AblationCount match_ablation(std::span<const Match> matches,
                             const std::vector<std::uint8_t>* inliers,
                             const KeypointSet& a, const KeypointSet& b,
                             const Tensor& mask_a, const Tensor& mask_b) {
  AblationCount c;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (inliers && !(*inliers)[i]) continue;
    ++c.all;
    if (!on_mask(mask_a, a.points[matches[i].a]) &&
        !on_mask(mask_b, b.points[matches[i].b])) {
      ++c.without_s;
    }
  }
  return c;
}

const RelativePose* PoseTable::find(int a, int b) const {
  const auto it = poses.find({a, b});
  return it == poses.end() ? nullptr : &it->second;
}

namespace {

double inlier_coverage(std::span<const Match> matches,
                       const std::vector<std::uint8_t>& inliers,
                       const KeypointSet& a, std::size_t height,
                       std::size_t width) {
  std::vector<Eigen::Vector2d> pts;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (inliers[i]) {
      const Keypoint& k = a.points[matches[i].a];
      pts.emplace_back(k.x, k.y);
    }
  }
  return grid_coverage(pts, height, width);
}

std::size_t count_flags(const std::vector<std::uint8_t>& flags) {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
}

}  // namespace

PairEvaluation evaluate_pair(const FrameFeatures& a, const FrameFeatures& b,
                             int step, const PoseTable* poses,
                             const Intrinsics* k, const EvalOptions& options) {
  PairEvaluation ev;
  ev.frame_a = a.id;
  ev.frame_b = b.id;
  ev.step = step;
  const KeypointSet& ka = a.features.keypoints;
  const KeypointSet& kb = b.features.keypoints;
  ev.features_a = ka.size();
  ev.features_b = kb.size();
  const std::vector<Match> matches =
      match_mutual(a.features.descriptors, b.features.descriptors);
  ev.matches = matches.size();

  RansacOptions ransac = options.ransac;
  ransac.seed = counter_hash(options.ransac.seed, static_cast<std::uint64_t>(a.id),
                             static_cast<std::uint64_t>(b.id));

  std::map<ModelKind, std::vector<std::uint8_t>> flags;
  auto record = [&](ModelKind kind, const ModelEstimate& est) {
    ModelResult r;
    r.ok = est.ok;
    r.inliers = est.ok ? est.inlier_count : 0;
    std::vector<std::uint8_t> f = est.ok ? est.inliers
                                         : std::vector<std::uint8_t>(matches.size(), 0);
    r.coverage = inlier_coverage(matches, f, ka, a.height, a.width);
    flags[kind] = std::move(f);
    ev.models[kind] = r;
  };

  const bool short_step = step <= 1;
  const RelativePose* truth = (poses && k) ? poses->find(a.id, b.id) : nullptr;
  std::optional<ModelEstimate> essential;
  if (options.all_models || short_step) {
    record(ModelKind::Homography,
           estimate_homography_ransac(matches, ka, kb, ransac));
  }
  if (options.all_models || !short_step) {
    record(ModelKind::Fundamental,
           estimate_fundamental_ransac(matches, ka, kb, ransac));
    if (k) {
      essential = estimate_essential_ransac(matches, ka, kb, *k, ransac);
      record(ModelKind::Essential, *essential);
    }
  }
  if (truth) {
    std::vector<std::uint8_t> f = pgt_inliers(matches, ka, kb, *truth, *k,
                                              options.ransac.threshold_px);
    ModelResult r;
    r.ok = true;
    r.inliers = count_flags(f);
    r.coverage = inlier_coverage(matches, f, ka, a.height, a.width);
    flags[ModelKind::PseudoGT] = std::move(f);
    ev.models[ModelKind::PseudoGT] = r;

    if (!essential) essential = estimate_essential_ransac(matches, ka, kb, *k, ransac);
    // A failed estimate counts as the worst possible rotation.
    double error = 180.0;
    if (essential->ok) {
      std::vector<Match> inlier_matches;
      for (std::size_t i = 0; i < matches.size(); ++i) {
        if (essential->inliers[i]) inlier_matches.push_back(matches[i]);
      }
      const PoseEstimate pose =
          recover_pose(essential->model, gather_pairs(inlier_matches, ka, kb), *k);
      if (pose.ok) error = rotation_error_deg(pose.pose, *truth);
    }
    ev.rotation_error_deg = error;
  }

  if (a.image && b.image) {
    const Tensor mask_a = specularity_mask(*a.image);
    const Tensor mask_b = specularity_mask(*b.image);
    ev.features_a_ablation = feature_ablation(ka, mask_a);
    ev.features_b_ablation = feature_ablation(kb, mask_b);
    ModelKind primary = short_step ? ModelKind::Homography
                        : flags.count(ModelKind::Essential) ? ModelKind::Essential
                                                            : ModelKind::Fundamental;
    if (flags.count(primary)) {
      ev.inlier_ablation =
          match_ablation(matches, &flags[primary], ka, kb, mask_a, mask_b);
    }
  }
  return ev;
}

std::vector<PairEvaluation> evaluate_pairs(
    std::span<const FrameFeatures> frames, int step, const PoseTable* poses,
    const Intrinsics* k, const EvalOptions& options,
    std::vector<std::string>* skipped) {
  if (step < 0) throw std::invalid_argument("evaluate_pairs: negative step");
  std::map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < frames.size(); ++i) by_id[frames[i].id] = i;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const int last = by_id.empty() ? 0 : by_id.rbegin()->first;
  for (const auto& [id, idx] : by_id) {
    const auto other = by_id.find(id + step);
    if (other != by_id.end()) {
      pairs.emplace_back(idx, other->second);
    } else if (id + step <= last && skipped) {
      skipped->push_back("pair (" + std::to_string(id) + ", " +
                         std::to_string(id + step) + "): frame " +
                         std::to_string(id + step) + " missing");
    }
  }
  std::vector<PairEvaluation> out(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (long p = 0; p < static_cast<long>(pairs.size()); ++p) {
    out[p] = evaluate_pair(frames[pairs[p].first], frames[pairs[p].second],
                           step, poses, k, options);
  }
  return out;
}

MethodReport aggregate(std::span<const PairEvaluation> evaluations,
                       const std::string& method) {
  if (evaluations.empty()) {
    throw std::invalid_argument("aggregate: no evaluations");
  }
  MethodReport r;
  r.method = method;
  r.step = evaluations.front().step;
  r.pairs = evaluations.size();
  const double n = static_cast<double>(r.pairs);
  std::vector<double> errors;
  std::size_t ablation_pairs = 0;
  for (const PairEvaluation& e : evaluations) {
    r.features_per_image += 0.5 * static_cast<double>(e.features_a + e.features_b) / n;
    r.mean_matches += static_cast<double>(e.matches) / n;
    for (const auto& [kind, result] : e.models) {
      ModelSummary& s = r.models[kind];
      ++s.pairs;
      s.mean_inliers += static_cast<double>(result.inliers);
      s.mean_coverage += result.coverage;
    }
    if (e.rotation_error_deg) errors.push_back(*e.rotation_error_deg);
    if (e.features_a_ablation && e.features_b_ablation) {
      ++ablation_pairs;
      r.features_all += 0.5 * static_cast<double>(e.features_a_ablation->all +
                                                   e.features_b_ablation->all);
      r.features_without_s +=
          0.5 * static_cast<double>(e.features_a_ablation->without_s +
                                    e.features_b_ablation->without_s);
      if (e.inlier_ablation) {
        r.inliers_all += static_cast<double>(e.inlier_ablation->all);
        r.inliers_without_s += static_cast<double>(e.inlier_ablation->without_s);
      }
    }
  }
  for (auto& [kind, s] : r.models) {
    s.mean_inliers /= static_cast<double>(s.pairs);
    s.mean_coverage /= static_cast<double>(s.pairs);
  }
  if (ablation_pairs) {
    const double m = static_cast<double>(ablation_pairs);
    r.has_ablation = true;
    r.features_all /= m;
    r.features_without_s /= m;
    r.inliers_all /= m;
    r.inliers_without_s /= m;
  }
  r.rotation_pairs = errors.size();
  if (!errors.empty()) {
    double total = 0.0;
    std::size_t failures = 0;
    for (double e : errors) {
      total += e;
      ++r.rotation_histogram[rotation_bucket(e)];
      if (e > kRotationFailureDeg) ++failures;
    }
    r.rotation_mean = total / static_cast<double>(errors.size());
    r.rotation_failure_rate =
        static_cast<double>(failures) / static_cast<double>(errors.size());
    std::sort(errors.begin(), errors.end());
    const std::size_t mid = errors.size() / 2;
    r.rotation_median = errors.size() % 2 ? errors[mid]
                                          : 0.5 * (errors[mid - 1] + errors[mid]);
  }
  return r;
}

PoseTable read_pose_file(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  PoseTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    int a = 0, b = 0;
    double qw, qx, qy, qz, tx, ty, tz;
    if (!(ls >> a)) continue;
    if (!(ls >> b >> qw >> qx >> qy >> qz >> tx >> ty >> tz)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 'frameA frameB qw qx qy qz tx ty tz'");
    }
    RelativePose pose;
    pose.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
    Eigen::Vector3d t(tx, ty, tz);
    if (!(t.norm() > 0.0)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": zero translation");
    }
    pose.translation = t.normalized();
    table.poses[{a, b}] = pose;
  }
  // Reverse pairs are implied: X_a = R^T X_b - R^T t.
  std::map<std::pair<int, int>, RelativePose> reversed;
  for (const auto& [key, pose] : table.poses) {
    const std::pair<int, int> rev{key.second, key.first};
    if (table.poses.count(rev)) continue;
    RelativePose inv;
    inv.rotation = pose.rotation.conjugate();
    inv.translation = -(inv.rotation * pose.translation);
    reversed[rev] = inv;
  }
  table.poses.merge(reversed);
  return table;
}

Intrinsics read_intrinsics_file(const std::filesystem::path& path) {
  // '#' starts a comment, as in the pose file.
  std::string text;
  std::istringstream lines(read_file(path));
  for (std::string line; std::getline(lines, line);) {
    text += line.substr(0, line.find('#')) + '\n';
  }
  std::istringstream in(text);
  Intrinsics k;
  std::string extra;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy) || (in >> extra)) {
    throw std::runtime_error(path.string() + ": expected 'fx fy cx cy'");
  }
  k.validate();
  return k;
}

}  // namespace endopoint
