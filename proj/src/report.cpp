#include "endopoint/report.hpp"

#include <cstdio>
#include <stdexcept>

#include "endopoint/file_util.hpp"

namespace endopoint {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr ModelKind kModelOrder[] = {ModelKind::Homography, ModelKind::Essential,
                                     ModelKind::Fundamental, ModelKind::PseudoGT};

// Fixed formatting keeps reports byte-identical across runs.
std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

ModelKind model_from_name(const std::string& name) {
  for (ModelKind k : kModelOrder) {
    if (model_name(k) == name) return k;
  }
  throw std::runtime_error("unknown model '" + name + "' in report");
}

ordered_json ablation_json(const AblationCount& c) {
  return {{"all", c.all}, {"without_s", c.without_s}};
}

AblationCount ablation_from(const json& j) {
  return {j.at("all").get<std::size_t>(), j.at("without_s").get<std::size_t>()};
}

}  // namespace

std::string report_csv(const std::vector<MethodReport>& reports) {
  std::string out =
      "method,step,pairs,feat_per_img,matches,"
      "h_inl,h_gr,e_inl,e_gr,f_inl,f_gr,pgt_inl,pgt_gr,"
      "rot_pairs,rot_mean_deg,rot_median_deg,rot_failure_rate,"
      "feat_all,feat_wo_s,feat_wo_s_pct,inl_all,inl_wo_s,inl_wo_s_pct\n";
  for (const MethodReport& r : reports) {
    out += r.method + "," + std::to_string(r.step) + "," +
           std::to_string(r.pairs) + "," + num(r.features_per_image) + "," +
           num(r.mean_matches);
    for (ModelKind k : kModelOrder) {
      const auto it = r.models.find(k);
      if (it == r.models.end()) {
        out += ",,";
      } else {
        out += "," + num(it->second.mean_inliers) + "," +
               num(it->second.mean_coverage);
      }
    }
    out += "," + std::to_string(r.rotation_pairs);
    if (r.rotation_pairs) {
      out += "," + num(r.rotation_mean) + "," + num(r.rotation_median) + "," +
             num(r.rotation_failure_rate);
    } else {
      out += ",,,";
    }
    if (r.has_ablation) {
      const auto pct = [](double all, double kept) {
        return all > 0.0 ? 100.0 * kept / all : 100.0;
      };
      out += "," + num(r.features_all) + "," + num(r.features_without_s) + "," +
             num(pct(r.features_all, r.features_without_s)) + "," +
             num(r.inliers_all) + "," + num(r.inliers_without_s) + "," +
             num(pct(r.inliers_all, r.inliers_without_s));
    } else {
      out += ",,,,,,";
    }
    out += "\n";
  }
  return out;
}

std::string histogram_csv(const std::vector<MethodReport>& reports) {
  std::string out = "method,step,bucket,count\n";
  for (const MethodReport& r : reports) {
    for (std::size_t b = 0; b < kRotationBucketNames.size(); ++b) {
      out += r.method + "," + std::to_string(r.step) + "," +
             kRotationBucketNames[b] + "," +
             std::to_string(r.rotation_histogram[b]) + "\n";
    }
  }
  return out;
}

ordered_json pair_to_json(const PairEvaluation& e) {
  ordered_json j;
  j["frame_a"] = e.frame_a;
  j["frame_b"] = e.frame_b;
  j["step"] = e.step;
  j["features_a"] = e.features_a;
  j["features_b"] = e.features_b;
  j["matches"] = e.matches;
  ordered_json models = ordered_json::object();
  for (ModelKind k : kModelOrder) {
    const auto it = e.models.find(k);
    if (it == e.models.end()) continue;
    models[model_name(k)] = {{"ok", it->second.ok},
                             {"inliers", it->second.inliers},
                             {"coverage", it->second.coverage}};
  }
  j["models"] = std::move(models);
  if (e.rotation_error_deg) j["rotation_error_deg"] = *e.rotation_error_deg;
  if (e.features_a_ablation) j["features_a_ablation"] = ablation_json(*e.features_a_ablation);
  if (e.features_b_ablation) j["features_b_ablation"] = ablation_json(*e.features_b_ablation);
  if (e.inlier_ablation) j["inlier_ablation"] = ablation_json(*e.inlier_ablation);
  return j;
}

PairEvaluation pair_from_json(const json& j) {
  PairEvaluation e;
  e.frame_a = j.at("frame_a").get<int>();
  e.frame_b = j.at("frame_b").get<int>();
  e.step = j.at("step").get<int>();
  e.features_a = j.at("features_a").get<std::size_t>();
  e.features_b = j.at("features_b").get<std::size_t>();
  e.matches = j.at("matches").get<std::size_t>();
  for (const auto& [name, m] : j.at("models").items()) {
    ModelResult r;
    r.ok = m.at("ok").get<bool>();
    r.inliers = m.at("inliers").get<std::size_t>();
    r.coverage = m.at("coverage").get<double>();
    e.models[model_from_name(name)] = r;
  }
  if (j.contains("rotation_error_deg")) e.rotation_error_deg = j["rotation_error_deg"].get<double>();
  if (j.contains("features_a_ablation")) e.features_a_ablation = ablation_from(j["features_a_ablation"]);
  if (j.contains("features_b_ablation")) e.features_b_ablation = ablation_from(j["features_b_ablation"]);
  if (j.contains("inlier_ablation")) e.inlier_ablation = ablation_from(j["inlier_ablation"]);
  return e;
}

ordered_json report_json(const std::vector<MethodRun>& runs,
                         const ReportMetadata& meta) {
  ordered_json j;
  j["metadata"] = {{"root_seed", meta.root_seed},
                   {"ransac_confidence", meta.ransac_confidence},
                   {"ransac_threshold_px", meta.ransac_threshold_px},
                   {"coverage_image", "A"},
                   {"coverage_grid", kCoverageGrid},
                   {"rotation_failure_deg", kRotationFailureDeg},
                   {"pose_file", meta.has_poses},
                   {"intrinsics_file", meta.has_intrinsics},
                   {"skipped", meta.skipped}};
  const std::vector<MethodReport> reports = aggregate_runs(runs);
  ordered_json summary = ordered_json::array();
  for (const MethodReport& r : reports) {
    ordered_json s;
    s["method"] = r.method;
    s["step"] = r.step;
    s["pairs"] = r.pairs;
    s["features_per_image"] = r.features_per_image;
    s["mean_matches"] = r.mean_matches;
    ordered_json models = ordered_json::object();
    for (const auto& [k, m] : r.models) {
      models[model_name(k)] = {{"pairs", m.pairs},
                               {"mean_inliers", m.mean_inliers},
                               {"mean_coverage", m.mean_coverage}};
    }
    s["models"] = std::move(models);
    s["rotation"] = {{"pairs", r.rotation_pairs},
                     {"mean_deg", r.rotation_mean},
                     {"median_deg", r.rotation_median},
                     {"failure_rate", r.rotation_failure_rate},
                     {"histogram", r.rotation_histogram}};
    if (r.has_ablation) {
      s["ablation"] = {{"features_all", r.features_all},
                       {"features_without_s", r.features_without_s},
                       {"inliers_all", r.inliers_all},
                       {"inliers_without_s", r.inliers_without_s}};
    }
    summary.push_back(std::move(s));
  }
  j["summary"] = std::move(summary);
  ordered_json detail = ordered_json::array();
  for (const MethodRun& run : runs) {
    ordered_json pairs = ordered_json::array();
    for (const PairEvaluation& e : run.pairs) pairs.push_back(pair_to_json(e));
    detail.push_back({{"method", run.method}, {"step", run.step}, {"pairs", pairs}});
  }
  j["runs"] = std::move(detail);
  return j;
}

std::vector<MethodRun> runs_from_json(const json& j, ReportMetadata* meta) {
  if (meta) {
    const json& m = j.at("metadata");
    meta->root_seed = m.at("root_seed").get<std::uint64_t>();
    meta->ransac_confidence = m.at("ransac_confidence").get<double>();
    meta->ransac_threshold_px = m.at("ransac_threshold_px").get<double>();
    meta->has_poses = m.at("pose_file").get<bool>();
    meta->has_intrinsics = m.at("intrinsics_file").get<bool>();
    meta->skipped = m.at("skipped").get<std::vector<std::string>>();
  }
  std::vector<MethodRun> runs;
  for (const json& r : j.at("runs")) {
    MethodRun run;
    run.method = r.at("method").get<std::string>();
    run.step = r.at("step").get<int>();
    for (const json& p : r.at("pairs")) run.pairs.push_back(pair_from_json(p));
    runs.push_back(std::move(run));
  }
  return runs;
}

std::vector<MethodReport> aggregate_runs(const std::vector<MethodRun>& runs) {
  std::vector<MethodReport> out;
  for (const MethodRun& run : runs) {
    if (run.pairs.empty()) continue;
    MethodReport r = aggregate(run.pairs, run.method);
    r.step = run.step;
    out.push_back(std::move(r));
  }
  return out;
}

void write_reports(const std::filesystem::path& dir,
                   const std::vector<MethodRun>& runs,
                   const ReportMetadata& meta) {
  const std::vector<MethodReport> reports = aggregate_runs(runs);
  write_file_atomic(dir / "report.csv", report_csv(reports));
  write_file_atomic(dir / "rotation_histogram.csv", histogram_csv(reports));
  write_file_atomic(dir / "report.json", report_json(runs, meta).dump(2) + "\n");
}

}  // namespace endopoint
