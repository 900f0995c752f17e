#include "endopoint/selfsup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "endopoint/file_util.hpp"
#include "endopoint/image_io.hpp"
#include "endopoint/ops.hpp"
#include "endopoint/rng.hpp"

namespace endopoint {

Homography Homography::translation(double tx, double ty) {
  Homography h;
  h.matrix(0, 2) = tx;
  h.matrix(1, 2) = ty;
  return h;
}

Homography Homography::normalized() const {
  Homography h = *this;
  if (h.matrix(2, 2) != 0.0) h.matrix /= h.matrix(2, 2);
  return h;
}

Homography Homography::inverse() const {
  Homography h;
  h.matrix = matrix.inverse();
  return h.normalized();
}

Eigen::Vector2d Homography::apply(const Eigen::Vector2d& p) const {
  return (matrix * p.homogeneous()).hnormalized();
}

namespace {

constexpr int kMaxHomographyDraws = 100;
constexpr double kBoxLow = -0.2, kBoxHigh = 1.2;

bool corners_inside_box(const Eigen::Matrix3d& m) {
  for (double x : {0.0, 1.0}) {
    for (double y : {0.0, 1.0}) {
      const Eigen::Vector3d q = m * Eigen::Vector3d(x, y, 1.0);
      if (q.z() <= 0.0) return false;
      const double u = q.x() / q.z(), v = q.y() / q.z();
      if (u < kBoxLow || u > kBoxHigh || v < kBoxLow || v > kBoxHigh) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

Homography sample_homography(std::uint64_t seed,
                             const HomographyConfig& config) {
  Rng rng(seed);
  auto draw = [&](double amplitude) {
    return amplitude == 0.0 ? 0.0 : rng.uniform(-amplitude, amplitude);
  };
  for (int attempt = 0; attempt < kMaxHomographyDraws; ++attempt) {
    const double px = draw(config.perspective);
    const double py = draw(config.perspective);
    const double s = 1.0 + draw(config.scale);
    const double theta = draw(config.rotation_deg) * std::numbers::pi / 180.0;
    const double tx = draw(config.translation);
    const double ty = draw(config.translation);

    Eigen::Matrix3d to_center = Eigen::Matrix3d::Identity();
    to_center(0, 2) = -0.5;
    to_center(1, 2) = -0.5;
    Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
    persp(2, 0) = px;
    persp(2, 1) = py;
    Eigen::Matrix3d rot_scale = Eigen::Matrix3d::Identity();
    rot_scale(0, 0) = s * std::cos(theta);
    rot_scale(0, 1) = -s * std::sin(theta);
    rot_scale(1, 0) = s * std::sin(theta);
    rot_scale(1, 1) = s * std::cos(theta);
    Eigen::Matrix3d back = Eigen::Matrix3d::Identity();
    back(0, 2) = 0.5 + tx;
    back(1, 2) = 0.5 + ty;

    Homography h;
    h.matrix = back * rot_scale * persp * to_center;
    h = h.normalized();
    if (std::abs(h.determinant()) > 1e-12 && corners_inside_box(h.matrix)) {
      return h;
    }
  }
  throw std::runtime_error("sample_homography: no valid sample after " +
                           std::to_string(kMaxHomographyDraws) + " draws");
}

Homography to_pixel_frame(const Homography& unit, std::size_t height,
                          std::size_t width) {
  const Eigen::Matrix3d d =
      Eigen::Vector3d(static_cast<double>(width), static_cast<double>(height),
                      1.0)
          .asDiagonal();
  Homography h;
  h.matrix = d * unit.matrix * d.inverse();
  return h.normalized();
}

Tensor warp_image(const Tensor& image, const Homography& h) {
  require_rank(image, 2, "warp_image");
  const std::size_t rows = image.dim(0), cols = image.dim(1);
  const Eigen::Matrix3d inv = h.matrix.inverse();
  Tensor out({rows, cols});
  const double max_x = static_cast<double>(cols) - 1.0;
  const double max_y = static_cast<double>(rows) - 1.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Eigen::Vector3d q =
          inv * Eigen::Vector3d(static_cast<double>(c), static_cast<double>(r), 1.0);
      if (q.z() == 0.0) continue;
      const double sx = q.x() / q.z(), sy = q.y() / q.z();
      if (!(sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y)) continue;
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, cols - 1);
      const std::size_t y1 = std::min(y0 + 1, rows - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      const double top = image.at(y0, x0) + fx * (image.at(y0, x1) - image.at(y0, x0));
      const double bottom =
          image.at(y1, x0) + fx * (image.at(y1, x1) - image.at(y1, x0));
      out.at(r, c) = top + fy * (bottom - top);
    }
  }
  return out;
}

Tensor CorrespondenceTensor::dense() const {
  Tensor s({rows_, cols_, rows_, cols_});
  for (std::size_t src = 0; src < cell_count(); ++src) {
    if (target_[src] >= 0) {
      s[src * cell_count() + static_cast<std::size_t>(target_[src])] = 1.0;
    }
  }
  return s;
}

CorrespondenceTensor correspondence_tensor(const Homography& h,
                                           std::size_t height,
                                           std::size_t width) {
  if (height % ops::kCell != 0 || width % ops::kCell != 0) {
    throw ShapeError("correspondence_tensor: image size must be divisible by 8");
  }
  const std::size_t hc = height / ops::kCell, wc = width / ops::kCell;
  CorrespondenceTensor s(hc, wc);
  const double half = (ops::kCell - 1) / 2.0;
  auto center = [&](std::size_t idx) {
    return static_cast<double>(ops::kCell * idx) + half;
  };
  // Nearest centre along one axis is the floor candidate or the next one.
  auto axis_candidates = [&](double v, std::size_t n) {
    const double f = std::floor((v - half) / ops::kCell);
    const long lo = std::clamp(static_cast<long>(f), 0L, static_cast<long>(n) - 1);
    const long hi = std::clamp(static_cast<long>(f) + 1, 0L, static_cast<long>(n) - 1);
    return std::pair<std::size_t, std::size_t>(lo, hi);
  };
  for (std::size_t i = 0; i < hc; ++i) {
    for (std::size_t j = 0; j < wc; ++j) {
      const Eigen::Vector2d p = h.apply({center(j), center(i)});
      if (!p.allFinite()) continue;
      const auto [k0, k1] = axis_candidates(p.y(), hc);
      const auto [l0, l1] = axis_candidates(p.x(), wc);
      double best = std::numeric_limits<double>::infinity();
      long best_flat = -1;
      for (std::size_t k : {k0, k1}) {
        for (std::size_t l : {l0, l1}) {
          const double dx = p.x() - center(l), dy = p.y() - center(k);
          const double d2 = dx * dx + dy * dy;
          const long flat = static_cast<long>(k * wc + l);
          if (d2 < best || (d2 == best && flat < best_flat)) {
            best = d2;
            best_flat = flat;
          }
        }
      }
      if (best <= kCorrespondenceRadius * kCorrespondenceRadius) {
        s.set_target(i, j, best_flat);
      }
    }
  }
  return s;
}

Tensor PseudoLabel::map() const {
  Tensor m({height, width});
  for (const ScoredPoint& p : points) m.at(p.y, p.x) = 1.0;
  return m;
}

PseudoLabel pseudolabel_from_heatmap(const Tensor& heatmap, const Tensor* roi,
                                     const LabelOptions& options) {
  PseudoLabel label;
  label.height = heatmap.dim(0);
  label.width = heatmap.dim(1);
  label.points = select_peaks(heatmap, roi, options.threshold,
                              options.nms_window, options.max_points);
  return label;
}

PseudoLabel generate_pseudolabels(const NetworkParams& teacher,
                                  const Tensor& image, const Tensor* roi,
                                  const LabelOptions& options) {
  const RawHeads raw = forward(teacher, image);
  return pseudolabel_from_heatmap(heatmap_from_detect(raw.detect), roi,
                                  options);
}

PseudoLabel warp_label(const PseudoLabel& label, const Homography& h) {
  PseudoLabel out;
  out.height = label.height;
  out.width = label.width;
  for (const ScoredPoint& p : label.points) {
    const Eigen::Vector2d q = h.apply({static_cast<double>(p.x), static_cast<double>(p.y)});
    if (!q.allFinite()) continue;
    const double x = std::round(q.x()), y = std::round(q.y());
    if (x < 0 || y < 0 || x >= static_cast<double>(label.width) ||
        y >= static_cast<double>(label.height)) {
      continue;
    }
    out.points.push_back({static_cast<int>(x), static_cast<int>(y), p.score});
  }
  return out;
}

Tensor specularity_mask(const Tensor& image, double threshold) {
  Tensor m(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    m[i] = image[i] > threshold ? 1.0 : 0.0;
  }
  return m;
}

std::string frame_filename(int id, const std::string& extension) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d", id);
  return buf + extension;
}

std::optional<int> parse_frame_id(const std::filesystem::path& path,
                                  const std::string& extension) {
  const std::string name = path.filename().string();
  static const std::regex pattern(R"(frame_(\d+)(\..+)$)");
  std::smatch m;
  if (!std::regex_match(name, m, pattern) || m[2].str() != extension) {
    return std::nullopt;
  }
  return std::stoi(m[1].str());
}

FrameSet ingest_frames(const std::filesystem::path& dir,
                       const std::optional<std::filesystem::path>& roi_path) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("frame directory not found: " + dir.string());
  }
  std::optional<Tensor> roi;
  if (roi_path) {
    roi = specularity_mask(read_pgm(*roi_path), 0.0);  // nonzero -> 1
  }
  std::vector<std::pair<int, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto id = parse_frame_id(entry.path())) files.emplace_back(*id, entry.path());
  }
  std::sort(files.begin(), files.end());

  FrameSet set;
  for (const auto& [id, path] : files) {
    try {
      Frame f;
      f.id = id;
      f.path = path;
      f.image = read_pgm(path);
      if (roi) {
        if (roi->shape() != f.image.shape()) {
          throw std::runtime_error("mask size " + shape_string(roi->shape()) +
                                   " differs from frame size " +
                                   shape_string(f.image.shape()));
        }
        f.roi = *roi;
      } else {
        f.roi = Tensor(f.image.shape(), 1.0);
      }
      set.frames.push_back(std::move(f));
    } catch (const std::exception& e) {
      set.errors.push_back({id, path, e.what()});
    }
  }
  return set;
}

void write_label_file(const std::filesystem::path& path,
                      const PseudoLabel& label) {
  std::ostringstream os;
  os.precision(17);
  for (const ScoredPoint& p : label.points) {
    os << p.x << ' ' << p.y << ' ' << p.score << '\n';
  }
  write_file_atomic(path, os.str());
}

PseudoLabel read_label_file(const std::filesystem::path& path,
                            std::size_t height, std::size_t width) {
  std::istringstream in(read_file(path));
  PseudoLabel label;
  label.height = height;
  label.width = width;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ScoredPoint p;
    if (!(ls >> p.x >> p.y >> p.score) || p.x < 0 || p.y < 0 ||
        static_cast<std::size_t>(p.x) >= width ||
        static_cast<std::size_t>(p.y) >= height) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": bad label line");
    }
    label.points.push_back(p);
  }
  return label;
}

}  // namespace endopoint
