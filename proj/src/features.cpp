#include "endopoint/features.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "endopoint/file_util.hpp"
#include "endopoint/kernels.hpp"
#include "endopoint/ops.hpp"
#include "endopoint/peaks.hpp"

namespace endopoint {

namespace {

KeypointSet to_keypoints(const std::vector<ScoredPoint>& peaks) {
  KeypointSet set;
  set.points.reserve(peaks.size());
  for (const ScoredPoint& p : peaks) {
    set.points.push_back({static_cast<double>(p.x), static_cast<double>(p.y),
                          p.score});
  }
  return set;
}

}  // namespace

Features extract_keypoints(const DenseOutputs& dense, const Tensor* roi,
                           const ExtractOptions& options) {
  const auto peaks = select_peaks(dense.heatmap, roi, options.threshold,
                                  options.nms_window, options.max_features);
  Features f;
  f.keypoints = to_keypoints(peaks);
  const std::size_t d = dense.descriptors.dim(2);
  f.descriptors.metric = Metric::L2;
  f.descriptors.dim = d;
  f.descriptors.real.reserve(peaks.size() * d);
  for (const ScoredPoint& p : peaks) {
    const double* v = dense.descriptors.data().data() +
                      (static_cast<std::size_t>(p.y) * dense.descriptors.dim(1) + p.x) * d;
    f.descriptors.real.insert(f.descriptors.real.end(), v, v + d);
  }
  return f;
}

Features detect_features(const RawHeads& raw, const Tensor* roi,
                         const ExtractOptions& options) {
  const Tensor heatmap = heatmap_from_detect(raw.detect);
  const auto peaks = select_peaks(heatmap, roi, options.threshold,
                                  options.nms_window, options.max_features);
  Features f;
  f.keypoints = to_keypoints(peaks);
  const std::size_t d = raw.describe.dim(2);
  f.descriptors.metric = Metric::L2;
  f.descriptors.dim = d;
  f.descriptors.real.resize(peaks.size() * d);
  Tensor row({1, 1, d});
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    ops::bicubic_sample(raw.describe, ops::kCell, peaks[i].y, peaks[i].x,
                        row.data());
    const Tensor unit = ops::l2_normalize(row);
    std::copy(unit.data().begin(), unit.data().end(),
              f.descriptors.real.begin() + i * d);
  }
  return f;
}

std::vector<Match> match_mutual(const DescriptorSet& a,
                                const DescriptorSet& b) {
  if (a.metric != b.metric) {
    throw std::invalid_argument("match_mutual: descriptor metrics differ");
  }
  if (a.dim != b.dim) {
    throw std::invalid_argument("match_mutual: descriptor dimensions differ");
  }
  const std::size_t n = a.size(), m = b.size();
  if (n == 0 || m == 0) return {};
  std::vector<double> dist(n * m);
  if (a.metric == Metric::L2) {
    kernels::parallel::pairwise_sq_l2(a.real, n, b.real, m, a.dim, dist);
  } else {
    kernels::parallel::pairwise_hamming(a.bits, n, b.bits, m,
                                        a.bytes_per_row(), dist);
  }
  std::vector<std::size_t> best_b(n, 0), best_a(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < m; ++j) {
      if (dist[i * m + j] < dist[i * m + best_b[i]]) best_b[i] = j;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 1; i < n; ++i) {
      if (dist[i * m + j] < dist[best_a[j] * m + j]) best_a[j] = i;
    }
  }
  std::vector<Match> matches;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = best_b[i];
    if (best_a[j] != i) continue;
    const double d = dist[i * m + j];
    matches.push_back({i, j, a.metric == Metric::L2 ? std::sqrt(d) : d});
  }
  return matches;
}

namespace {

std::filesystem::path with_suffix(std::filesystem::path stem,
                                  const char* suffix) {
  stem += suffix;
  return stem;
}

}  // namespace

void write_features(const std::filesystem::path& stem, const Features& f) {
  const DescriptorSet& d = f.descriptors;
  if (d.size() != f.keypoints.size() && !(d.dim == 0 && f.keypoints.size() == 0)) {
    throw std::invalid_argument("write_features: descriptor count differs");
  }
  std::ostringstream text;
  text.precision(9);
  text << "metric " << (d.metric == Metric::L2 ? "L2" : "HAMMING") << " dim "
       << d.dim << '\n';
  for (const Keypoint& k : f.keypoints.points) {
    text << k.x << ' ' << k.y << ' ' << k.score << '\n';
  }
  std::string blob;
  if (d.metric == Metric::L2) {
    blob.reserve(d.real.size() * 4);
    for (double v : d.real) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>(bits >> (8 * i)));
    }
  } else {
    blob.assign(d.bits.begin(), d.bits.end());
  }
  write_file_atomic(with_suffix(stem, ".desc"), blob);
  write_file_atomic(with_suffix(stem, ".feat"), text.str());
}

Features read_features(const std::filesystem::path& stem) {
  const auto feat_path = with_suffix(stem, ".feat");
  std::istringstream text(read_file(feat_path));
  std::string key_metric, metric, key_dim;
  Features f;
  if (!(text >> key_metric >> metric >> key_dim >> f.descriptors.dim) ||
      key_metric != "metric" || key_dim != "dim" ||
      (metric != "L2" && metric != "HAMMING")) {
    throw std::runtime_error(feat_path.string() + ": bad header");
  }
  f.descriptors.metric = metric == "L2" ? Metric::L2 : Metric::Hamming;
  Keypoint k;
  while (text >> k.x >> k.y >> k.score) f.keypoints.points.push_back(k);
  if (!text.eof()) throw std::runtime_error(feat_path.string() + ": bad keypoint line");

  const std::string blob = read_file(with_suffix(stem, ".desc"));
  const std::size_t n = f.keypoints.size();
  DescriptorSet& d = f.descriptors;
  if (d.metric == Metric::L2) {
    if (blob.size() != n * d.dim * 4) {
      throw std::runtime_error(stem.string() + ".desc: size mismatch");
    }
    d.real.resize(n * d.dim);
    for (std::size_t i = 0; i < d.real.size(); ++i) {
      std::uint32_t bits = 0;
      for (int q = 0; q < 4; ++q) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * i + q]))
                << (8 * q);
      }
      d.real[i] = std::bit_cast<float>(bits);
    }
  } else {
    if (blob.size() != n * d.bytes_per_row()) {
      throw std::runtime_error(stem.string() + ".desc: size mismatch");
    }
    d.bits.assign(blob.begin(), blob.end());
  }
  return f;
}

}  // namespace endopoint
