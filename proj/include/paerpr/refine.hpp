#pragma once

#include "paerpr/apr.hpp"
#include "paerpr/rpr.hpp"

#include <limits>
#include <stdexcept>
#include <vector>

namespace paerpr {

enum class ReferenceSource { apr_estimate, nearest_training_pose };

struct RefineConfig {
  std::size_t iterations = 1;
  ReferenceSource reference = ReferenceSource::apr_estimate;
  const std::vector<Pose>* pose_database = nullptr;  // required for nearest_training_pose
  double damping = 1.0;                              // applied to the delta; 1.0 = paper behavior
};

struct RefinementTrace {
  std::vector<Pose> poses;           // length iterations + 1, starting at the APR estimate
  std::vector<RelativePose> deltas;  // length iterations
  std::vector<Pose> references;      // the reference each delta was applied to
};

/// argmin position L2 over the database; ties broken by lowest index.
inline std::size_t nearest_pose_index(const std::vector<Pose>& db, const Pose& query) {
  if (db.empty()) throw std::invalid_argument("nearest_pose: empty database");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < db.size(); ++i) {
    double d = (db[i].position - query.position).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline Pose nearest_pose(const std::vector<Pose>& db, const Pose& query) {
  return db[nearest_pose_index(db, query)];
}

inline RelativePose damp_delta(const RelativePose& d, double damping) {
  if (damping == 1.0) return d;
  RelativePose out;
  out.dx = d.dx * damping;
  Quat q = d.dq.canonicalized();
  double angle = 2.0 * std::acos(std::clamp(q.w, -1.0, 1.0));
  Vec3 axis(q.x, q.y, q.z);
  out.dq = axis.norm() < 1e-12 ? Quat::identity() : Quat::from_axis_angle(axis, angle * damping);
  return out;
}

/// Two-stage localization: APR initial estimate, then one or more PAE-RPR
/// refinement motions applied on top. With the nearest-pose reference, the
/// database pose closest to the APR estimate replaces it in iteration 1 only;
/// later iterations always start from the current estimate.
inline std::pair<Pose, RefinementTrace> refine_pose(const AprModel& apr,
                                                    const TransformerRprModel& rpr,
                                                    const Observation& obs,
                                                    std::size_t scene_index,
                                                    const RefineConfig& cfg) {
  if (cfg.iterations < 1) throw std::invalid_argument("refine_pose: iterations must be >= 1");
  if (cfg.reference == ReferenceSource::nearest_training_pose &&
      (cfg.pose_database == nullptr || cfg.pose_database->empty()))
    throw std::invalid_argument("refine_pose: nearest_training_pose requires a pose database");
  rpr.pae->check_scene(scene_index);

  RefinementTrace trace;
  Pose current = apr.forward(obs).pose;
  trace.poses.push_back(current);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Pose reference = current;
    if (it == 0 && cfg.reference == ReferenceSource::nearest_training_pose)
      reference = nearest_pose(*cfg.pose_database, current);
    RelativePose delta = damp_delta(rpr.forward(obs, reference, scene_index), cfg.damping);
    current = apply_relative(reference, delta);
    current.orientation = current.orientation.canonicalized();
    trace.references.push_back(reference);
    trace.deltas.push_back(delta);
    trace.poses.push_back(current);
  }
  return {current, trace};
}

/// Batched refinement over a test set; identical math to refine_pose.
inline std::vector<Pose> refine_batch(const AprModel& apr, const TransformerRprModel& rpr,
                                      const Dataset& data, const std::vector<std::size_t>& idx,
                                      const RefineConfig& cfg) {
  if (cfg.iterations < 1) throw std::invalid_argument("refine_batch: iterations must be >= 1");
  if (cfg.reference == ReferenceSource::nearest_training_pose &&
      (cfg.pose_database == nullptr || cfg.pose_database->empty()))
    throw std::invalid_argument("refine_batch: nearest_training_pose requires a pose database");

  auto apr_out = apr.forward_batch(data, idx);
  std::vector<Pose> current(idx.size());
  std::vector<std::vector<double>> queries(idx.size());
  std::vector<std::size_t> scenes(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    current[r] = apr_out[r].pose;
    queries[r] = data.samples[idx[r]].observation.values;
    scenes[r] = data.samples[idx[r]].scene_index;
  }
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Pose> reference = current;
    if (it == 0 && cfg.reference == ReferenceSource::nearest_training_pose)
      for (Pose& p : reference) p = nearest_pose(*cfg.pose_database, p);
    auto deltas = rpr.forward_batch(queries, reference, scenes);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      current[r] = apply_relative(reference[r], damp_delta(deltas[r], cfg.damping));
      current[r].orientation = current[r].orientation.canonicalized();
    }
  }
  return current;
}

}  // namespace paerpr
