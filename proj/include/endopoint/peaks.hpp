#pragma once

#include <cstddef>
#include <vector>

#include "endopoint/tensor.hpp"

namespace endopoint {

struct ScoredPoint {
  int x = 0;  // column
  int y = 0;  // row
  double score = 0.0;

  friend bool operator==(const ScoredPoint&, const ScoredPoint&) = default;
};

/// Greedy non-maximum suppression on an H x W score map.
///
/// Pixels with score >= threshold (and > 0) that lie inside `mask` (nonzero,
/// optional) are visited by descending score, ties by (row, column)
/// ascending. A visited pixel is kept unless an already kept pixel lies within
/// Chebyshev distance window / 2; at most `max_count` pixels are kept.
std::vector<ScoredPoint> select_peaks(const Tensor& scores, const Tensor* mask,
                                      double threshold, std::size_t window,
                                      std::size_t max_count);

}  // namespace endopoint
