#include "endopoint/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>

#include <json.hpp>

#include "endopoint/features.hpp"
#include "endopoint/file_util.hpp"
#include "endopoint/metrics.hpp"
#include "endopoint/network.hpp"
#include "endopoint/report.hpp"
#include "endopoint/rng.hpp"
#include "endopoint/selfsup.hpp"
#include "endopoint/train.hpp"
#include "endopoint/weights_io.hpp"

namespace endopoint {

namespace fs = std::filesystem;

namespace {

enum class Need { Dir, File };

void require(const RunConfig& cfg, const std::string& key, Need need) {
  if (!cfg.has(key)) throw ConfigError("missing required key '" + key + "'");
  const fs::path p = cfg.path(key);
  const bool ok = need == Need::Dir ? fs::is_directory(p) : fs::is_regular_file(p);
  if (!ok) {
    throw ConfigError(key + ": " + (need == Need::Dir ? "no such directory" : "no such file") +
                      " '" + p.string() + "'");
  }
}

void optional_file(const RunConfig& cfg, const std::string& key) {
  if (cfg.has(key)) require(cfg, key, Need::File);
}

fs::path output_dir(const RunConfig& cfg) {
  if (!cfg.has("output_dir")) throw ConfigError("missing required key 'output_dir'");
  const fs::path out = cfg.path("output_dir");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) {
    throw ConfigError("output_dir: cannot create '" + out.string() + "'");
  }
  return out;
}

std::optional<fs::path> mask_path(const RunConfig& cfg) {
  if (!cfg.has("mask_path")) return std::nullopt;
  return cfg.path("mask_path");
}

FrameSet load_frames(const RunConfig& cfg) {
  try {
    return ingest_frames(cfg.path("frames_dir"), mask_path(cfg));
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

NetworkParams load_network(const RunConfig& cfg) {
  try {
    return load_weights(cfg.path("weights"));
  } catch (const std::exception& e) {
    throw ConfigError("weights: " + std::string(e.what()));
  }
}

Architecture parse_arch(const RunConfig& cfg) {
  const std::string& name = cfg.str("arch");
  if (name == "reference") return Architecture::reference();
  if (name == "toy") return Architecture::toy();
  std::vector<int> w;
  try {
    w = cfg.int_list("arch");
  } catch (const ConfigError&) {
    w.clear();
  }
  if (w.size() != 5 || std::any_of(w.begin(), w.end(), [](int v) { return v <= 0; })) {
    throw ConfigError("arch: expected reference, toy or five positive widths, got '" +
                      name + "'");
  }
  Architecture a;
  for (std::size_t i = 0; i < 4; ++i) a.encoder_widths[i] = static_cast<std::size_t>(w[i]);
  a.head_width = static_cast<std::size_t>(w[4]);
  return a;
}

ExtractOptions extract_options(const RunConfig& cfg) {
  ExtractOptions o;
  o.threshold = cfg.real("detection_threshold");
  o.nms_window = cfg.count("nms_window");
  o.max_features = cfg.count("max_features");
  if (o.nms_window % 2 == 0) throw ConfigError("nms_window must be odd");
  return o;
}

LabelOptions label_options(const RunConfig& cfg) {
  LabelOptions o;
  o.threshold = cfg.real("label_threshold");
  o.nms_window = cfg.count("label_nms_window");
  o.max_points = cfg.count("label_top_k");
  if (o.nms_window % 2 == 0) throw ConfigError("label_nms_window must be odd");
  return o;
}

LossConfig loss_config(const RunConfig& cfg) {
  LossConfig l;
  l.lambda = cfg.real("lambda");
  l.lambda_s = cfg.real("lambda_s");
  l.lambda_d = cfg.real("lambda_d");
  l.margin_pos = cfg.real("margin_pos");
  l.margin_neg = cfg.real("margin_neg");
  l.negative_ratio = cfg.real("negative_ratio");
  l.negative_seed = counter_hash(cfg.seed("seed"), 1, 0);
  try {
    l.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return l;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.iterations = cfg.count("iterations");
  t.learning_rate = cfg.real("learning_rate");
  t.batch_size = cfg.count("batch_size");
  t.seed = counter_hash(cfg.seed("seed"), 2, 0);
  t.checkpoint_every = cfg.count("checkpoint_every");
  t.homography.perspective = cfg.real("homography_perspective");
  t.homography.scale = cfg.real("homography_scale");
  t.homography.rotation_deg = cfg.real("homography_rotation");
  t.homography.translation = cfg.real("homography_translation");
  try {
    t.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return t;
}

RansacOptions ransac_options(const RunConfig& cfg) {
  RansacOptions r;
  r.confidence = cfg.real("ransac_confidence");
  r.threshold_px = cfg.real("ransac_threshold");
  r.max_iterations = cfg.count("ransac_max_iterations");
  r.seed = counter_hash(cfg.seed("seed"), 3, 0);
  if (!(r.confidence > 0.0 && r.confidence < 1.0)) {
    throw ConfigError("ransac_confidence must be in (0, 1)");
  }
  if (!(r.threshold_px > 0.0)) throw ConfigError("ransac_threshold must be positive");
  return r;
}

void log_frame_errors(const FrameSet& set, std::ostream& log) {
  for (const FrameError& e : set.errors) {
    log << "frame " << e.id << " (" << e.path.string() << "): " << e.message << "\n";
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Frame ids of the `.feat` files in a directory.
std::vector<int> feature_ids(const fs::path& dir) {
  std::vector<int> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (auto id = parse_frame_id(entry.path(), ".feat")) ids.push_back(*id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// (name, directory) per method.
std::vector<std::pair<std::string, fs::path>> method_dirs(const RunConfig& cfg) {
  const fs::path root = cfg.path("features_dir");
  std::vector<std::pair<std::string, fs::path>> out;
  for (const std::string& m : cfg.list("methods")) {
    const fs::path dir = root / m;
    if (!fs::is_directory(dir)) {
      throw ConfigError("method '" + m + "': no directory '" + dir.string() + "'");
    }
    out.emplace_back(m, dir);
  }
  if (!out.empty()) return out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) out.emplace_back(entry.path().filename().string(), entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) {
    // a bare directory of feature files is a single method
    fs::path name = fs::absolute(root).lexically_normal();
    if (name.filename().empty()) name = name.parent_path();
    out.emplace_back(name.filename().string(), root);
  }
  return out;
}

}  // namespace

int cmd_pseudolabel(const RunConfig& cfg, std::ostream& log) {
  require(cfg, "frames_dir", Need::Dir);
  require(cfg, "weights", Need::File);
  optional_file(cfg, "mask_path");
  const LabelOptions opts = label_options(cfg);
  const fs::path out = output_dir(cfg);
  const NetworkParams teacher = load_network(cfg);
  const FrameSet set = load_frames(cfg);
  log_frame_errors(set, log);
  bool failed = !set.errors.empty();
  std::size_t written = 0, skipped = 0;
  for (const Frame& f : set.frames) {
    const fs::path target = out / frame_filename(f.id, ".txt");
    if (!cfg.flag("force") && fs::exists(target)) {
      ++skipped;
      continue;
    }
    try {
      write_label_file(target, generate_pseudolabels(teacher, f.image, &f.roi, opts));
      ++written;
    } catch (const std::exception& e) {
      log << "frame " << f.id << ": " << e.what() << "\n";
      failed = true;
    }
  }
  log << "pseudolabel: " << written << " written, " << skipped << " cached\n";
  return failed ? kExitPartial : kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  require(cfg, "frames_dir", Need::Dir);
  require(cfg, "labels_dir", Need::Dir);
  optional_file(cfg, "weights");
  optional_file(cfg, "mask_path");
  const TrainConfig tcfg = train_config(cfg);
  const LossConfig lcfg = loss_config(cfg);
  const fs::path out = output_dir(cfg);
  NetworkParams initial = cfg.has("weights")
                              ? load_network(cfg)
                              : NetworkParams::initialize(parse_arch(cfg), cfg.seed("seed"));

  const FrameSet set = load_frames(cfg);
  if (!set.errors.empty()) {
    log_frame_errors(set, log);
    throw ConfigError("training frames failed to load");
  }
  std::vector<TrainingSample> dataset;
  const fs::path labels = cfg.path("labels_dir");
  std::vector<int> missing;
  for (const Frame& f : set.frames) {
    const fs::path label = labels / frame_filename(f.id, ".txt");
    if (!fs::exists(label)) {
      missing.push_back(f.id);
      continue;
    }
    try {
      dataset.push_back({f.image, read_label_file(label, f.image.dim(0), f.image.dim(1))});
    } catch (const std::exception& e) {
      throw ConfigError(label.string() + ": " + e.what());
    }
  }
  if (!missing.empty()) {
    std::string ids;
    for (int id : missing) ids += " " + std::to_string(id);
    throw ConfigError("no pseudo-labels for frames:" + ids);
  }
  if (dataset.empty()) throw ConfigError("no training frames");

  const fs::path ckpt_dir = out / "checkpoints";
  auto on_checkpoint = [&](std::size_t it, const NetworkParams& p, const AdamState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%08zu", it);
    save_weights(p, ckpt_dir / (std::string(name) + ".spwt"));
    write_optimizer_state(ckpt_dir / (std::string(name) + ".state"), s, it);
  };

  std::string csv = "iteration,total,detection,descriptor,specularity\n";
  auto append = [&](const std::vector<LossRecord>& history) {
    for (const LossRecord& r : history) {
      csv += std::to_string(r.iteration) + "," + fmt(r.total) + "," + fmt(r.detection) +
             "," + fmt(r.descriptor) + "," + fmt(r.specularity) + "\n";
    }
  };
  try {
    TrainResult result = finetune(std::move(initial), dataset, tcfg, lcfg, on_checkpoint);
    append(result.history);
    write_file_atomic(out / "loss.csv", csv);
    save_weights(result.params, out / "weights.spwt");
    write_optimizer_state(out / "weights.state", result.optimizer, tcfg.iterations);
  } catch (const TrainingError& e) {
    log << "training aborted at iteration " << e.iteration() << ": " << e.what() << "\n";
    return kExitPartial;
  }
  log << "train: " << tcfg.iterations << " iterations on " << dataset.size()
      << " frames\n";
  return kExitOk;
}

int cmd_detect(const RunConfig& cfg, std::ostream& log) {
  require(cfg, "frames_dir", Need::Dir);
  require(cfg, "weights", Need::File);
  optional_file(cfg, "mask_path");
  const ExtractOptions opts = extract_options(cfg);
  const fs::path out = output_dir(cfg);
  const NetworkParams params = load_network(cfg);
  const FrameSet set = load_frames(cfg);
  log_frame_errors(set, log);
  bool failed = !set.errors.empty();
  std::size_t done = 0;
  for (const Frame& f : set.frames) {
    try {
      Features feats = detect_features(forward(params, f.image), &f.roi, opts);
      feats.keypoints.frame_id = f.id;
      write_features(out / frame_filename(f.id, ""), feats);
      ++done;
    } catch (const std::exception& e) {
      log << "frame " << f.id << ": " << e.what() << "\n";
      failed = true;
    }
  }
  log << "detect: " << done << " frames\n";
  return failed ? kExitPartial : kExitOk;
}

int cmd_match(const RunConfig& cfg, std::ostream& log) {
  require(cfg, "features_dir", Need::Dir);
  const std::vector<int> steps = cfg.int_list("steps");
  if (steps.empty()) throw ConfigError("steps: no step given");
  const fs::path out = output_dir(cfg);
  bool failed = false;
  for (const auto& [method, dir] : method_dirs(cfg)) {
    const std::vector<int> ids = feature_ids(dir);
    const std::set<int> present(ids.begin(), ids.end());
    for (int step : steps) {
      if (step < 0) throw ConfigError("steps: negative step");
      const fs::path target = out / method / ("s" + std::to_string(step));
      for (int id : ids) {
        if (!present.count(id + step)) continue;
        try {
          const Features a = read_features(dir / frame_filename(id, ""));
          const Features b = read_features(dir / frame_filename(id + step, ""));
          std::string text = "# index_a index_b distance\n";
          for (const Match& m : match_mutual(a.descriptors, b.descriptors)) {
            text += std::to_string(m.a) + " " + std::to_string(m.b) + " " +
                    fmt(m.distance) + "\n";
          }
          const std::string name = frame_filename(id, "") + "_" +
                                   frame_filename(id + step, ".match");
          write_file_atomic(target / name, text);
        } catch (const std::exception& e) {
          log << method << " pair (" << id << ", " << id + step << "): " << e.what()
              << "\n";
          failed = true;
        }
      }
    }
  }
  return failed ? kExitPartial : kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  require(cfg, "features_dir", Need::Dir);
  optional_file(cfg, "pose_file");
  optional_file(cfg, "intrinsics_file");
  if (cfg.has("frames_dir")) require(cfg, "frames_dir", Need::Dir);
  optional_file(cfg, "mask_path");
  const std::vector<int> steps = cfg.int_list("steps");
  if (steps.empty()) throw ConfigError("steps: no step given");
  for (int s : steps) {
    if (s < 0) throw ConfigError("steps: negative step");
  }
  EvalOptions options;
  options.ransac = ransac_options(cfg);
  options.all_models = cfg.flag("all_models");
  const auto methods = method_dirs(cfg);
  const fs::path out = output_dir(cfg);

  std::optional<PoseTable> poses;
  std::optional<Intrinsics> k;
  try {
    if (cfg.has("pose_file")) poses = read_pose_file(cfg.path("pose_file"));
    if (cfg.has("intrinsics_file")) k = read_intrinsics_file(cfg.path("intrinsics_file"));
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (poses && !k) log << "eval: pose_file without intrinsics_file, pGT disabled\n";

  // every method must cover the same frames
  std::map<std::string, std::vector<int>> ids;
  std::set<int> all;
  for (const auto& [m, dir] : methods) {
    ids[m] = feature_ids(dir);
    all.insert(ids[m].begin(), ids[m].end());
  }
  std::string coverage;
  for (const auto& [m, list] : ids) {
    std::vector<int> missing;
    std::set_difference(all.begin(), all.end(), list.begin(), list.end(),
                        std::back_inserter(missing));
    if (missing.empty()) continue;
    coverage += "\n  " + m + " lacks frames:";
    for (int id : missing) coverage += " " + std::to_string(id);
  }
  if (!coverage.empty()) throw ConfigError("inconsistent frame coverage across methods:" + coverage);

  std::map<int, Tensor> images;
  if (cfg.has("frames_dir")) {
    FrameSet set = load_frames(cfg);
    log_frame_errors(set, log);
    for (Frame& f : set.frames) images[f.id] = std::move(f.image);
  }
  const std::size_t default_w = cfg.count("image_width");
  const std::size_t default_h = cfg.count("image_height");

  ReportMetadata meta;
  meta.root_seed = cfg.seed("seed");
  meta.ransac_confidence = options.ransac.confidence;
  meta.ransac_threshold_px = options.ransac.threshold_px;
  meta.has_poses = poses.has_value();
  meta.has_intrinsics = k.has_value();

  std::vector<MethodRun> runs;
  for (const auto& [m, dir] : methods) {
    std::vector<FrameFeatures> frames;
    for (int id : ids[m]) {
      FrameFeatures ff;
      ff.id = id;
      try {
        ff.features = read_features(dir / frame_filename(id, ""));
      } catch (const std::exception& e) {
        throw ConfigError(m + ": " + e.what());
      }
      const auto img = images.find(id);
      if (img != images.end()) {
        ff.image = &img->second;
        ff.height = img->second.dim(0);
        ff.width = img->second.dim(1);
      } else {
        ff.height = default_h;
        ff.width = default_w;
      }
      if (ff.height == 0 || ff.width == 0) {
        throw ConfigError("frame " + std::to_string(id) +
                          ": size unknown, set frames_dir or image_width/image_height");
      }
      frames.push_back(std::move(ff));
    }
    for (int step : steps) {
      std::vector<std::string> skipped;
      MethodRun run;
      run.method = m;
      run.step = step;
      run.pairs = evaluate_pairs(frames, step, poses ? &*poses : nullptr,
                                 k ? &*k : nullptr, options, &skipped);
      for (std::string& s : skipped) {
        log << m << " step " << step << ": skipped " << s << "\n";
        meta.skipped.push_back(m + " step " + std::to_string(step) + ": " + s);
      }
      if (run.pairs.empty()) log << m << " step " << step << ": no pairs\n";
      runs.push_back(std::move(run));
    }
  }
  write_reports(out, runs, meta);
  log << "eval: " << methods.size() << " methods, " << steps.size() << " steps\n";
  return kExitOk;
}

int cmd_report(const RunConfig& cfg, std::ostream& log) {
  const std::vector<std::string> inputs = cfg.list("reports");
  if (inputs.empty()) throw ConfigError("missing required key 'reports'");
  for (const std::string& p : inputs) {
    if (!fs::is_regular_file(p)) throw ConfigError("reports: no such file '" + p + "'");
  }
  const fs::path out = output_dir(cfg);
  std::vector<MethodRun> runs;
  ReportMetadata meta;
  bool first = true;
  for (const std::string& p : inputs) {
    try {
      ReportMetadata m;
      auto more = runs_from_json(nlohmann::json::parse(read_file(p)), &m);
      if (first) {
        meta = m;
        first = false;
      } else {
        meta.skipped.insert(meta.skipped.end(), m.skipped.begin(), m.skipped.end());
      }
      for (MethodRun& r : more) runs.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ConfigError(p + ": " + e.what());
    }
  }
  write_reports(out, runs, meta);
  log << "report: " << runs.size() << " runs\n";
  return kExitOk;
}

int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log) {
  try {
    if (const long jobs = cfg.integer("jobs"); jobs > 0) {
      omp_set_num_threads(static_cast<int>(jobs));
    }
    if (name == "pseudolabel") return cmd_pseudolabel(cfg, log);
    if (name == "train") return cmd_train(cfg, log);
    if (name == "detect") return cmd_detect(cfg, log);
    if (name == "match") return cmd_match(cfg, log);
    if (name == "eval") return cmd_eval(cfg, log);
    if (name == "report") return cmd_report(cfg, log);
    log << "unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitPartial;
  }
}

}  // namespace endopoint
