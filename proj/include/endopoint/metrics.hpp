#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "endopoint/features.hpp"
#include "endopoint/geometry.hpp"
#include "endopoint/tensor.hpp"

namespace endopoint {

inline constexpr std::size_t kCoverageGrid = 16;
inline constexpr double kRotationFailureDeg = 30.0;

/// Percentage of the 16 x 16 image grid cells holding at least one point.
/// Cells are W / 16 by H / 16 pixels; the last row and column absorb the
/// remainder.
double grid_coverage(std::span<const Eigen::Vector2d> points,
                     std::size_t height, std::size_t width);

/// Geodesic angle of R_est * R_gt^T, in degrees.
double rotation_error_deg(const RelativePose& estimate,
                          const RelativePose& truth);

/// Histogram bucket of a rotation error: [0, 5), [5, 10), [10, 30], > 30.
std::size_t rotation_bucket(double error_deg);
inline constexpr std::array<const char*, 4> kRotationBucketNames{
    "0-5", "5-10", "10-30", ">30"};

struct AblationCount {
  std::size_t all = 0;
  std::size_t without_s = 0;
  /// 100 * without_s / all; 100 when there is nothing to lose.
  double percentage() const;
};

/// Features whose pixel is not specular.
AblationCount feature_ablation(const KeypointSet& keypoints,
                               const Tensor& specular_mask);
/// Matches (optionally only flagged inliers) with neither endpoint specular.
AblationCount match_ablation(std::span<const Match> matches,
                             const std::vector<std::uint8_t>* inliers,
                             const KeypointSet& a, const KeypointSet& b,
                             const Tensor& mask_a, const Tensor& mask_b);

struct ModelResult {
  std::size_t inliers = 0;
  double coverage = 0.0;  // %Gr on image A
  bool ok = false;
};

struct PairEvaluation {
  int frame_a = 0, frame_b = 0;
  int step = 0;
  std::size_t features_a = 0, features_b = 0;
  std::size_t matches = 0;
  std::map<ModelKind, ModelResult> models;
  std::optional<double> rotation_error_deg;
  // Specularity ablation, when frames are available.
  std::optional<AblationCount> features_a_ablation, features_b_ablation;
  std::optional<AblationCount> inlier_ablation;  // H for step <= 1, else E/F
};

struct PoseTable {
  std::map<std::pair<int, int>, RelativePose> poses;
  const RelativePose* find(int a, int b) const;
};

struct EvalOptions {
  RansacOptions ransac;
  /// Fit every model on every pair instead of H for step <= 1 and E/F
  /// otherwise.
  bool all_models = false;
};

struct FrameFeatures {
  int id = 0;
  Features features;
  std::size_t height = 0, width = 0;
  const Tensor* image = nullptr;  // optional, enables the ablation
};

/// Matches and scores one pair of frames.
PairEvaluation evaluate_pair(const FrameFeatures& a, const FrameFeatures& b,
                             int step, const PoseTable* poses,
                             const Intrinsics* k, const EvalOptions& options);

/// Evaluates the pairs (t, t + step) over the frame ids present. Pairs whose
/// second frame is missing are skipped and reported in `skipped`. Step 0
/// pairs every frame with itself.
std::vector<PairEvaluation> evaluate_pairs(
    std::span<const FrameFeatures> frames, int step, const PoseTable* poses,
    const Intrinsics* k, const EvalOptions& options,
    std::vector<std::string>* skipped = nullptr);

struct ModelSummary {
  std::size_t pairs = 0;
  double mean_inliers = 0.0;
  double mean_coverage = 0.0;
};

struct MethodReport {
  std::string method;
  int step = 0;
  std::size_t pairs = 0;
  double features_per_image = 0.0;
  double mean_matches = 0.0;
  std::map<ModelKind, ModelSummary> models;
  std::size_t rotation_pairs = 0;
  double rotation_mean = 0.0, rotation_median = 0.0;
  double rotation_failure_rate = 0.0;
  std::array<std::size_t, 4> rotation_histogram{};
  // Specularity ablation (means per image / per pair).
  bool has_ablation = false;
  double features_all = 0.0, features_without_s = 0.0;
  double inliers_all = 0.0, inliers_without_s = 0.0;
};

/// Column means over the evaluations; throws on an empty list.
MethodReport aggregate(std::span<const PairEvaluation> evaluations,
                       const std::string& method = "");

PoseTable read_pose_file(const std::filesystem::path& path);
Intrinsics read_intrinsics_file(const std::filesystem::path& path);

}  // namespace endopoint
