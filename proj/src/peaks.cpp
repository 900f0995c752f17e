#include "endopoint/peaks.hpp"

#include <algorithm>
#include <stdexcept>

namespace endopoint {

std::vector<ScoredPoint> select_peaks(const Tensor& scores, const Tensor* mask,
                                      double threshold, std::size_t window,
                                      std::size_t max_count) {
  require_rank(scores, 2, "select_peaks");
  if (window == 0 || window % 2 == 0) {
    throw std::invalid_argument("select_peaks: window must be odd");
  }
  if (mask && mask->shape() != scores.shape()) {
    throw ShapeError("select_peaks: mask " + shape_string(mask->shape()) +
                     " does not match scores " + shape_string(scores.shape()));
  }
  const int h = static_cast<int>(scores.dim(0));
  const int w = static_cast<int>(scores.dim(1));
  std::vector<ScoredPoint> candidates;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double s = scores.at(y, x);
      if (s <= 0.0 || s < threshold) continue;
      if (mask && mask->at(y, x) == 0.0) continue;
      candidates.push_back({x, y, s});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const ScoredPoint& a, const ScoredPoint& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.y != b.y) return a.y < b.y;
              return a.x < b.x;
            });

  const int radius = static_cast<int>(window / 2);
  std::vector<unsigned char> suppressed(static_cast<std::size_t>(h) * w, 0);
  std::vector<ScoredPoint> kept;
  for (const ScoredPoint& c : candidates) {
    if (kept.size() >= max_count) break;
    if (suppressed[static_cast<std::size_t>(c.y) * w + c.x]) continue;
    kept.push_back(c);
    for (int y = std::max(0, c.y - radius); y <= std::min(h - 1, c.y + radius);
         ++y) {
      for (int x = std::max(0, c.x - radius);
           x <= std::min(w - 1, c.x + radius); ++x) {
        suppressed[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
  }
  return kept;
}

}  // namespace endopoint
