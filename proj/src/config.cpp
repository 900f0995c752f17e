#include "endopoint/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "endopoint/file_util.hpp"

namespace endopoint {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"frames_dir", "", "directory of frame_%06d.pgm images"},
      {"mask_path", "", "region-of-interest PGM (nonzero = valid)"},
      {"weights", "", "network weights file (SPWT)"},
      {"labels_dir", "", "pseudo-label cache directory"},
      {"features_dir", "", "feature files, one subdirectory per method"},
      {"methods", "", "comma separated method names (default: all subdirectories)"},
      {"reports", "", "comma separated report.json files to merge"},
      {"output_dir", "", "where every output goes"},
      {"detection_threshold", "0.015", "keypoint probability threshold"},
      {"nms_window", "3", "odd NMS window for detection"},
      {"max_features", "10000", "keypoints kept per frame"},
      {"ransac_confidence", "0.9999", "RANSAC confidence"},
      {"ransac_threshold", "3", "RANSAC inlier threshold in pixels"},
      {"ransac_max_iterations", "10000", "RANSAC iteration cap"},
      {"steps", "1", "comma separated frame steps to evaluate"},
      {"all_models", "false", "fit H, E and F on every pair"},
      {"lambda", "0.0001", "descriptor loss weight"},
      {"lambda_s", "100", "specularity loss weight"},
      {"lambda_d", "250", "positive pair weight in the descriptor loss"},
      {"margin_pos", "1", "positive descriptor margin"},
      {"margin_neg", "0.2", "negative descriptor margin"},
      {"negative_ratio", "1", "fraction of negative cell pairs kept"},
      {"seed", "0", "root seed"},
      {"iterations", "200000", "training iterations"},
      {"learning_rate", "0.00001", "Adam learning rate"},
      {"batch_size", "2", "training batch size"},
      {"checkpoint_every", "1000", "checkpoint cadence in iterations (0: final only)"},
      {"arch", "reference", "reference | toy | w1,w2,w3,w4,head (used without weights)"},
      {"homography_perspective", "0.05", "training warp perspective amplitude"},
      {"homography_scale", "0.2", "training warp scale amplitude"},
      {"homography_rotation", "25", "training warp rotation amplitude (degrees)"},
      {"homography_translation", "0.1", "training warp translation amplitude"},
      {"image_width", "0", "frame width for eval without frames_dir"},
      {"image_height", "0", "frame height for eval without frames_dir"},
      {"pose_file", "", "relative poses: frameA frameB qw qx qy qz tx ty tz"},
      {"intrinsics_file", "", "camera intrinsics: fx fy cx cy"},
      {"jobs", "0", "worker threads (0: OpenMP default)"},
      {"label_threshold", "0.015", "pseudo-label probability threshold"},
      {"label_nms_window", "9", "pseudo-label NMS window"},
      {"label_top_k", "600", "pseudo-labels kept per frame"},
      {"force", "false", "recompute existing outputs"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const ConfigKey& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected +
                    ", got '" + value + "'");
}

}  // namespace

RunConfig::RunConfig() {
  for (const ConfigKey& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> seen;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!find_key(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError(where + ": duplicate key '" + key + "'");
    }
    seen.push_back(key);
    cfg.values_[key] = value;
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config: " + std::string(e.what()));
  }
  return parse(text, path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return !str(key).empty(); }

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = str(key);
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

long RunConfig::integer(const std::string& key) const {
  const std::string& v = str(key);
  long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::size_t RunConfig::count(const std::string& key) const {
  const long v = integer(key);
  if (v < 0) bad_value(key, str(key), "a nonnegative integer");
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::seed(const std::string& key) const {
  const std::string& v = str(key);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off" || v.empty()) return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(str(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  for (const std::string& item : list(key)) {
    int v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      bad_value(key, str(key), "comma separated integers");
    }
    out.push_back(v);
  }
  return out;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
  return std::filesystem::path(str(key));
}

std::string RunConfig::dump() const {
  std::string out;
  for (const ConfigKey& k : config_keys()) {
    out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
  }
  return out;
}

}  // namespace endopoint
