#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "endopoint/network.hpp"
#include "endopoint/peaks.hpp"
#include "endopoint/tensor.hpp"

namespace endopoint {

/// Planar projective map x' ~ H x on (column, row, 1) coordinates.
struct Homography {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty);

  /// Scales so that element (2, 2) is 1 when it is nonzero.
  Homography normalized() const;
  Homography inverse() const;
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  double determinant() const { return matrix.determinant(); }
};

/// Sampling amplitudes. Scale is drawn from [1 - scale, 1 + scale], rotation
/// from +-rotation_deg, translation and perspective from +-amplitude, all in
/// unit-square coordinates.
struct HomographyConfig {
  double perspective = 0.05;
  double scale = 0.2;
  double rotation_deg = 25.0;
  double translation = 0.1;
};

/// Random homography on the unit square. Samples are redrawn until the map is
/// invertible and every unit-square corner lands in [-0.2, 1.2]^2; throws
/// after 100 rejected draws.
Homography sample_homography(std::uint64_t seed, const HomographyConfig& config);

/// Conjugates a unit-square homography into pixel coordinates of an image of
/// the given size.
Homography to_pixel_frame(const Homography& unit, std::size_t height,
                          std::size_t width);

/// Inverse warping with bilinear sampling; samples outside the frame are 0.
Tensor warp_image(const Tensor& image, const Homography& h);

/// Cell correspondences induced by a homography between two images split into
/// 8x8 cells. Each source cell centre is mapped through the homography and
/// paired with the nearest target cell centre when that centre lies within
/// 8 pixels (ties go to the lowest row, then column).
class CorrespondenceTensor {
 public:
  CorrespondenceTensor(std::size_t cells_high, std::size_t cells_wide)
      : rows_(cells_high), cols_(cells_wide), target_(rows_ * cols_, -1) {}

  std::size_t cells_high() const { return rows_; }
  std::size_t cells_wide() const { return cols_; }
  std::size_t cell_count() const { return rows_ * cols_; }

  /// Flat target index (k * cols + l) of source cell (i, j), or -1.
  long target(std::size_t i, std::size_t j) const {
    return target_[i * cols_ + j];
  }
  long target(std::size_t flat) const { return target_[flat]; }
  void set_target(std::size_t i, std::size_t j, long flat) {
    target_[i * cols_ + j] = flat;
  }
  bool at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return target(i, j) == static_cast<long>(k * cols_ + l);
  }

  /// Hc x Wc x Hc x Wc binary tensor.
  Tensor dense() const;

 private:
  std::size_t rows_, cols_;
  std::vector<long> target_;
};

inline constexpr double kCorrespondenceRadius = 8.0;

CorrespondenceTensor correspondence_tensor(const Homography& h,
                                           std::size_t height,
                                           std::size_t width);

struct PseudoLabel {
  std::size_t height = 0, width = 0;
  std::vector<ScoredPoint> points;

  /// Binary H x W keypoint map.
  Tensor map() const;
};

struct LabelOptions {
  double threshold = 0.015;
  std::size_t nms_window = 9;
  std::size_t max_points = 600;
};

/// Thresholds, suppresses, and keeps the strongest points of a teacher
/// heatmap. Pixels outside `roi` (nonzero = valid) are zeroed first.
PseudoLabel pseudolabel_from_heatmap(const Tensor& heatmap, const Tensor* roi,
                                     const LabelOptions& options = {});
PseudoLabel generate_pseudolabels(const NetworkParams& teacher,
                                  const Tensor& image, const Tensor* roi,
                                  const LabelOptions& options = {});

/// Maps label points through a pixel homography, rounding to the nearest
/// pixel and dropping points that leave the frame.
PseudoLabel warp_label(const PseudoLabel& label, const Homography& h);

inline constexpr double kSpecularThreshold = 0.7;

/// 1 where intensity is strictly above 0.7, else 0.
Tensor specularity_mask(const Tensor& image,
                        double threshold = kSpecularThreshold);

// ------------------------------------------------------------------ frames

struct Frame {
  int id = 0;
  std::filesystem::path path;
  Tensor image;  // H x W in [0, 1]
  Tensor roi;    // H x W, 1 = valid
};

struct FrameError {
  int id = -1;
  std::filesystem::path path;
  std::string message;
};

struct FrameSet {
  std::vector<Frame> frames;
  std::vector<FrameError> errors;
};

std::string frame_filename(int id, const std::string& extension = ".pgm");
/// Numeric id of a `frame_%06d.<ext>` file name.
std::optional<int> parse_frame_id(const std::filesystem::path& path,
                                  const std::string& extension = ".pgm");

/// Frames of a directory sorted by id, with an optional region-of-interest
/// mask (PGM, nonzero = valid) shared by all frames. Unreadable frames and
/// size mismatches are reported per frame; a missing or unreadable mask
/// throws.
FrameSet ingest_frames(const std::filesystem::path& dir,
                       const std::optional<std::filesystem::path>& roi_path);

/// Pseudo-label cache: one `x y score` line per point.
void write_label_file(const std::filesystem::path& path,
                      const PseudoLabel& label);
PseudoLabel read_label_file(const std::filesystem::path& path,
                            std::size_t height, std::size_t width);

}  // namespace endopoint
