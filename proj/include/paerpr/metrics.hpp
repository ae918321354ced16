#pragma once

#include "paerpr/pose.hpp"
#include "paerpr/scene.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace paerpr {

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty list");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline PoseError pose_error(const Pose& predicted, const Pose& truth) {
  PoseError e;
  e.position_error = (predicted.position - truth.position).norm();
  e.orientation_error_deg = angular_error_degrees(predicted.orientation, truth.orientation);
  return e;
}

/// Cumulative error distribution over [0, truncation], matching the
/// truncated-CDF reporting convention.
struct CdfTable {
  std::vector<double> thresholds;
  std::vector<double> fraction;  // fraction of errors <= threshold
};

inline CdfTable make_cdf(const std::vector<double>& errors, double truncation, std::size_t bins) {
  CdfTable t;
  for (std::size_t i = 0; i <= bins; ++i) {
    double thr = truncation * static_cast<double>(i) / static_cast<double>(bins);
    std::size_t below = 0;
    for (double e : errors)
      if (e <= thr) ++below;
    t.thresholds.push_back(thr);
    t.fraction.push_back(static_cast<double>(below) / static_cast<double>(errors.size()));
  }
  return t;
}

struct SceneMetrics {
  std::size_t scene_index = 0;
  std::size_t count = 0;
  double median_position = 0.0;
  double median_orientation_deg = 0.0;
};

struct EvalConfig {
  double cdf_position_truncation = 0.3;  // scene units (box diagonal = 1)
  double cdf_orientation_truncation = 20.0;
  std::size_t cdf_bins = 60;
};

/// Per-scene medians plus the cross-scene mean of medians; medians are always
/// recomputable from the retained per-sample error lists.
struct MetricsReport {
  std::vector<SceneMetrics> per_scene;
  double mean_median_position = 0.0;
  double mean_median_orientation_deg = 0.0;
  std::vector<PoseError> per_sample;
  std::vector<std::size_t> sample_scene;
  CdfTable position_cdf;
  CdfTable orientation_cdf;
};

inline MetricsReport evaluate_poses(const std::vector<Pose>& predicted, const Dataset& data,
                                    const std::vector<std::size_t>& idx, EvalConfig cfg = {}) {
  if (idx.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (predicted.size() != idx.size()) throw std::invalid_argument("evaluate: prediction count mismatch");
  MetricsReport rep;
  std::vector<std::vector<double>> pos_by_scene(data.scenes.size()), ang_by_scene(data.scenes.size());
  std::vector<double> all_pos, all_ang;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Sample& s = data.samples[idx[r]];
    PoseError e = pose_error(predicted[r], s.pose);
    rep.per_sample.push_back(e);
    rep.sample_scene.push_back(s.scene_index);
    pos_by_scene[s.scene_index].push_back(e.position_error);
    ang_by_scene[s.scene_index].push_back(e.orientation_error_deg);
    all_pos.push_back(e.position_error);
    all_ang.push_back(e.orientation_error_deg);
  }
  double sum_pos = 0.0, sum_ang = 0.0;
  std::size_t scenes_with_data = 0;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    if (pos_by_scene[s].empty()) continue;
    SceneMetrics m;
    m.scene_index = s;
    m.count = pos_by_scene[s].size();
    m.median_position = median(pos_by_scene[s]);
    m.median_orientation_deg = median(ang_by_scene[s]);
    rep.per_scene.push_back(m);
    sum_pos += m.median_position;
    sum_ang += m.median_orientation_deg;
    ++scenes_with_data;
  }
  rep.mean_median_position = sum_pos / static_cast<double>(scenes_with_data);
  rep.mean_median_orientation_deg = sum_ang / static_cast<double>(scenes_with_data);
  rep.position_cdf = make_cdf(all_pos, cfg.cdf_position_truncation, cfg.cdf_bins);
  rep.orientation_cdf = make_cdf(all_ang, cfg.cdf_orientation_truncation, cfg.cdf_bins);
  return rep;
}

inline std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> idx(data.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace paerpr
