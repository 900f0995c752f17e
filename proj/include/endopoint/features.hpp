#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "endopoint/network.hpp"
#include "endopoint/tensor.hpp"

namespace endopoint {

struct Keypoint {
  double x = 0.0;  // column, pixels
  double y = 0.0;  // row, pixels
  double score = 0.0;
};

struct KeypointSet {
  int frame_id = -1;
  std::vector<Keypoint> points;

  std::size_t size() const { return points.size(); }
};

enum class Metric : std::uint8_t { L2, Hamming };

/// Row-major descriptor matrix. Real descriptors use `real` (size * dim);
/// binary descriptors use `bits`, packed into (dim + 7) / 8 bytes per row,
/// least significant bit first.
struct DescriptorSet {
  Metric metric = Metric::L2;
  std::size_t dim = 0;
  std::vector<double> real;
  std::vector<std::uint8_t> bits;

  std::size_t bytes_per_row() const { return (dim + 7) / 8; }
  std::size_t size() const {
    if (dim == 0) return 0;
    return metric == Metric::L2 ? real.size() / dim : bits.size() / bytes_per_row();
  }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(real).subspan(i * dim, dim);
  }
};

struct Features {
  KeypointSet keypoints;
  DescriptorSet descriptors;
};

struct ExtractOptions {
  double threshold = 0.015;
  std::size_t nms_window = 3;
  std::size_t max_features = 10000;
};

/// Thresholded, suppressed, capped keypoints from a dense heatmap, with their
/// descriptors read from the dense descriptor map. `roi` (nonzero = valid) is
/// optional.
Features extract_keypoints(const DenseOutputs& dense, const Tensor* roi,
                           const ExtractOptions& options = {});

/// Same result as extract_keypoints(densify(raw), ...), but descriptors are
/// interpolated only at the selected keypoints.
Features detect_features(const RawHeads& raw, const Tensor* roi,
                         const ExtractOptions& options = {});

struct Match {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;  // L2 distance or Hamming bit count

  friend bool operator==(const Match&, const Match&) = default;
};

/// Mutual nearest neighbours: (i, j) is kept iff j is the nearest row of b
/// to a_i and i the nearest row of a to b_j, lowest index winning ties.
/// Result is ordered by index into a.
std::vector<Match> match_mutual(const DescriptorSet& a,
                                const DescriptorSet& b);

/// External feature files: `<stem>.feat` holds the header line
/// `metric L2|HAMMING dim D` followed by `x y score` lines; `<stem>.desc` holds
/// the descriptors (little-endian f32 rows for L2, packed bits for Hamming).
void write_features(const std::filesystem::path& stem, const Features& f);
Features read_features(const std::filesystem::path& stem);

}  // namespace endopoint
