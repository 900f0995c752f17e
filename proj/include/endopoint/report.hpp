#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "endopoint/metrics.hpp"

namespace endopoint {

/// Evaluations of one method at one step.
struct MethodRun {
  std::string method;
  int step = 0;
  std::vector<PairEvaluation> pairs;
};

struct ReportMetadata {
  std::uint64_t root_seed = 0;
  double ransac_confidence = 0.0;
  double ransac_threshold_px = 0.0;
  bool has_poses = false;
  bool has_intrinsics = false;
  std::vector<std::string> skipped;
};

std::string report_csv(const std::vector<MethodReport>& reports);
std::string histogram_csv(const std::vector<MethodReport>& reports);

nlohmann::ordered_json pair_to_json(const PairEvaluation& e);
PairEvaluation pair_from_json(const nlohmann::json& j);

nlohmann::ordered_json report_json(const std::vector<MethodRun>& runs,
                                   const ReportMetadata& meta);
/// Inverse of report_json for the per-pair detail.
std::vector<MethodRun> runs_from_json(const nlohmann::json& j,
                                      ReportMetadata* meta = nullptr);

/// Aggregates every run; runs without pairs are dropped.
std::vector<MethodReport> aggregate_runs(const std::vector<MethodRun>& runs);

/// Writes report.csv, report.json and rotation_histogram.csv into `dir`.
void write_reports(const std::filesystem::path& dir,
                   const std::vector<MethodRun>& runs,
                   const ReportMetadata& meta);

}  // namespace endopoint
