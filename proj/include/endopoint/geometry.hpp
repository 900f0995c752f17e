#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "endopoint/features.hpp"

namespace endopoint {

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  Eigen::Matrix3d matrix() const;
  void validate() const;
};

/// Pose of camera B relative to camera A: X_b = R * X_a + t, with t a unit
/// direction (scale is unobservable from two views).
struct RelativePose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::UnitX();

  /// Normalises both the quaternion and the translation.
  static RelativePose from(const Eigen::Matrix3d& rotation,
                           const Eigen::Vector3d& translation);
  Eigen::Matrix3d rotation_matrix() const {
    return rotation.toRotationMatrix();
  }
};

enum class ModelKind { Homography, Essential, Fundamental, PseudoGT };
const char* model_name(ModelKind kind);

/// Matched pixel coordinates.
struct PointPairs {
  std::vector<Eigen::Vector2d> a, b;
  std::size_t size() const { return a.size(); }
};
PointPairs gather_pairs(std::span<const Match> matches, const KeypointSet& a,
                        const KeypointSet& b);

struct RansacOptions {
  double confidence = 0.9999;
  double threshold_px = 3.0;
  std::size_t max_iterations = 10000;
  std::uint64_t seed = 0;
};

struct ModelEstimate {
  bool ok = false;
  std::string reason;
  Eigen::Matrix3d model = Eigen::Matrix3d::Zero();
  std::vector<std::uint8_t> inliers;  // one flag per input pair
  std::size_t inlier_count = 0;
  std::size_t iterations = 0;
};

// Minimal and least-squares solvers with Hartley normalisation.

/// DLT homography mapping a -> b from >= 4 pairs.
Eigen::Matrix3d fit_homography(const PointPairs& pairs);
/// Rank-2 fundamental matrix with b^T F a = 0 from >= 8 pairs.
Eigen::Matrix3d fit_fundamental(const PointPairs& pairs);
/// Closest matrix with singular values (s, s, 0), s the mean of the top two.
Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& e);

/// max(|H a - b|, |H^-1 b - a|) in pixels.
double homography_transfer_error(const Eigen::Matrix3d& h,
                                 const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b);
/// max(distance of b to the line F a, distance of a to the line F^T b).
double epipolar_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                         const Eigen::Vector2d& b);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);
Eigen::Matrix3d essential_from_pose(const RelativePose& pose);
Eigen::Matrix3d fundamental_from_essential(const Eigen::Matrix3d& e,
                                           const Intrinsics& k);

// RANSAC estimators. Pairs are processed in canonical (index a, index b)
// order so results do not depend on the order of `matches`; inlier flags are
// reported in the caller's order.

ModelEstimate estimate_homography_ransac(std::span<const Match> matches,
                                         const KeypointSet& a,
                                         const KeypointSet& b,
                                         const RansacOptions& options = {});
ModelEstimate estimate_fundamental_ransac(std::span<const Match> matches,
                                          const KeypointSet& a,
                                          const KeypointSet& b,
                                          const RansacOptions& options = {});
ModelEstimate estimate_essential_ransac(std::span<const Match> matches,
                                        const KeypointSet& a,
                                        const KeypointSet& b,
                                        const Intrinsics& k,
                                        const RansacOptions& options = {});

// Same estimators on raw point pairs (already in canonical order).
ModelEstimate ransac_homography(const PointPairs& pairs,
                                const RansacOptions& options);
ModelEstimate ransac_fundamental(const PointPairs& pairs,
                                 const RansacOptions& options);
ModelEstimate ransac_essential(const PointPairs& pairs, const Intrinsics& k,
                               const RansacOptions& options);

struct PoseEstimate {
  bool ok = false;
  std::string reason;
  RelativePose pose;
  /// Points in front of both cameras for (R1, t), (R1, -t), (R2, t), (R2, -t).
  std::array<std::size_t, 4> front_counts{};
  std::array<RelativePose, 4> candidates;
};

/// Decomposes E into its four (R, t) candidates and keeps the one that places
/// the most triangulated pairs in front of both cameras. A tie for the
/// maximum is a failure.
PoseEstimate recover_pose(const Eigen::Matrix3d& e, const PointPairs& pairs,
                          const Intrinsics& k);

/// Flags matches within `threshold_px` (symmetric epipolar distance) of the
/// epipolar geometry implied by a reference pose.
std::vector<std::uint8_t> pgt_inliers(std::span<const Match> matches,
                                      const KeypointSet& a,
                                      const KeypointSet& b,
                                      const RelativePose& pose,
                                      const Intrinsics& k,
                                      double threshold_px = 3.0);

}  // namespace endopoint
