#pragma once

// Synthetic endoscopy-like frames: piecewise-constant texture below 0.7 with
// bright square blobs (specular highlights). Labels sit on texture corners
// and, like a teacher that fires on highlights, on blob corners.

#include <random>

#include "endopoint/selfsup.hpp"
#include "endopoint/tensor.hpp"

namespace testutil {

struct SpecularFrame {
  endopoint::Tensor image;
  endopoint::PseudoLabel label;
  double blob_fraction = 0.0;
};

inline void add_corners(endopoint::PseudoLabel& l, int y0, int x0, int y1, int x1) {
  for (int y : {y0, y1})
    for (int x : {x0, x1})
      if (x >= 0 && y >= 0 && x < int(l.width) && y < int(l.height)) l.points.push_back({x, y, 0.5});
}

// One rectangle per tile, so corners are never occluded.
inline SpecularFrame texture_frame(std::size_t h, std::size_t w, int tile, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shade(0.05, 0.6);
  std::uniform_int_distribution<int> span(tile / 4, tile * 5 / 8), jitter(0, tile / 4);
  SpecularFrame f;
  f.image = endopoint::Tensor({h, w}, 0.3);
  f.label = {h, w, {}};
  for (int ty = 0; ty + tile <= int(h); ty += tile)
    for (int tx = 0; tx + tile <= int(w); tx += tile) {
      const int y0 = ty + 2 + jitter(rng), x0 = tx + 2 + jitter(rng);
      const int y1 = std::min(ty + tile - 3, y0 + span(rng)), x1 = std::min(tx + tile - 3, x0 + span(rng));
      const double v = shade(rng);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) f.image.at(y, x) = v;
      add_corners(f.label, y0, x0, y1, x1);
    }
  return f;
}

inline SpecularFrame specular_frame(std::size_t size, std::mt19937_64& rng) {
  for (;;) {
    SpecularFrame f = texture_frame(size, size, 32, rng);
    // bright blobs until 5-10% of the pixels are specular
    std::uniform_int_distribution<int> pos(0, int(size) - 8), side(4, 7);
    std::size_t bright = 0;
    while (bright < 0.075 * size * size) {
      const int y0 = pos(rng), x0 = pos(rng), s = side(rng);
      for (int y = y0; y < y0 + s; ++y)
        for (int x = x0; x < x0 + s; ++x) f.image.at(y, x) = 0.95;
      add_corners(f.label, y0, x0, y0 + s - 1, x0 + s - 1);
      bright = 0;
      for (std::size_t i = 0; i < f.image.size(); ++i) bright += f.image[i] > 0.7;
    }
    f.blob_fraction = double(bright) / (size * size);
    if (f.blob_fraction >= 0.05 && f.blob_fraction <= 0.10) return f;
  }
}

}  // namespace testutil
