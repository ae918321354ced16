#pragma once

#include "paerpr/pose.hpp"
#include "paerpr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace paerpr {

struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 half_extent() const { return 0.5 * (hi - lo); }
  double diagonal() const { return (hi - lo).norm(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Box3 inflated(double factor) const {
    Vec3 c = center(), h = half_extent() * factor;
    return Box3{c - h, c + h};
  }
};

/// Camera position bounds with the box diagonal normalized to 1.0; all error
/// thresholds in this project are stated in these units.
inline Box3 default_bounds() {
  Vec3 d(4.0, 5.0, 3.0);
  d /= d.norm();
  return Box3{-0.5 * d, 0.5 * d};
}

/// A deterministic synthetic scene: landmarks scattered in an inflated box
/// around the camera volume. Regeneration from (seed, scene_id) is
/// bit-identical.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::uint64_t scene_id = 0;
  Box3 bounds;                  // camera position bounds
  std::vector<Vec3> landmarks;  // inside bounds.inflated(kLandmarkInflate)

  std::size_t observation_dim() const { return landmarks.size() * 3; }
};

constexpr double kLandmarkInflate = 2.2;

inline SceneSpec generate_scene(std::uint64_t seed, std::uint64_t scene_id,
                                std::size_t num_landmarks, Box3 bounds = default_bounds()) {
  if (num_landmarks < 8) throw std::invalid_argument("generate_scene: need at least 8 landmarks");
  SceneSpec s;
  s.seed = seed;
  s.scene_id = scene_id;
  s.bounds = bounds;
  Box3 lm_box = bounds.inflated(kLandmarkInflate);
  Rng rng(mix_seed(seed, mix_seed(fnv1a64("scene"), scene_id)));
  s.landmarks.reserve(num_landmarks);
  for (std::size_t i = 0; i < num_landmarks; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = rng.uniform(lm_box.lo[a], lm_box.hi[a]);
    s.landmarks.push_back(p);
  }
  return s;
}

/// Stand-in for an image: per-landmark unit bearing vectors in the camera
/// frame, concatenated, with Gaussian noise and occlusion-style dropout.
struct Observation {
  std::vector<double> values;
};

inline Observation render_observation(const SceneSpec& scene, const Pose& pose, double noise_sigma,
                                      double dropout_prob, Rng& rng) {
  Observation obs;
  obs.values.reserve(scene.observation_dim());
  Eigen::Matrix3d r_wc = pose.orientation.rotation_matrix().transpose();
  for (const Vec3& lm : scene.landmarks) {
    Vec3 d = r_wc * (lm - pose.position);
    double n = d.norm();
    Vec3 bearing = n < 1e-12 ? Vec3::Zero() : Vec3(d / n);
    Vec3 noise(rng.normal(), rng.normal(), rng.normal());
    double u = rng.uniform();
    Vec3 v = bearing + noise_sigma * noise;
    if (u < dropout_prob) v.setZero();
    obs.values.push_back(v.x());
    obs.values.push_back(v.y());
    obs.values.push_back(v.z());
  }
  return obs;
}

struct Sample {
  Observation observation;
  Pose pose;
  std::size_t scene_index = 0;    // index into Dataset::scenes
  std::uint64_t noise_seed = 0;   // re-rendering with this seed reproduces the observation
};

struct ObsNoise {
  double sigma = 0.01;
  double landmark_dropout = 0.05;
};

/// Orientation sampling: look at the scene center, then perturb by a random
/// axis-angle rotation of at most max_perturb_deg. Fully uniform orientations
/// would frequently face away from every landmark.
inline Quat sample_orientation(const Vec3& position, const Vec3& target, double max_perturb_deg,
                               Rng& rng) {
  Vec3 fwd = target - position;
  double n = fwd.norm();
  Quat look;
  if (n > 1e-12) {
    fwd /= n;
    Vec3 ez(0, 0, 1);
    double c = ez.dot(fwd);
    if (c > 1.0 - 1e-12) {
      look = Quat::identity();
    } else if (c < -1.0 + 1e-12) {
      look = Quat::from_axis_angle(Vec3(1, 0, 0), kPi);
    } else {
      look = Quat::from_axis_angle(ez.cross(fwd), std::acos(std::clamp(c, -1.0, 1.0)));
    }
  }
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  double angle = rng.uniform(0.0, max_perturb_deg * kPi / 180.0);
  Quat perturb = axis.norm() < 1e-12 ? Quat::identity() : Quat::from_axis_angle(axis, angle);
  return quat_multiply(look, perturb).canonicalized();
}

/// Draw n samples with positions uniform in the scene bounds. Deterministic
/// per (seed, index); scene_index is left at 0 for the caller to assign.
inline std::vector<Sample> sample_dataset(const SceneSpec& scene, std::size_t n, std::uint64_t seed,
                                          ObsNoise noise = {}, double max_perturb_deg = 60.0) {
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  std::vector<Sample> out;
  out.reserve(n);
  Vec3 center = scene.bounds.center();
  for (std::size_t i = 0; i < n; ++i) {
    Rng pose_rng(mix_seed(seed, mix_seed(fnv1a64("pose"), i)));
    Sample s;
    for (int a = 0; a < 3; ++a)
      s.pose.position[a] = pose_rng.uniform(scene.bounds.lo[a], scene.bounds.hi[a]);
    s.pose.orientation = sample_orientation(s.pose.position, center, max_perturb_deg, pose_rng);
    s.noise_seed = mix_seed(seed, mix_seed(fnv1a64("noise"), i));
    Rng noise_rng(s.noise_seed);
    s.observation = render_observation(scene, s.pose, noise.sigma, noise.landmark_dropout, noise_rng);
    out.push_back(std::move(s));
  }
  return out;
}

struct Dataset {
  std::vector<SceneSpec> scenes;
  std::vector<Sample> samples;

  std::size_t observation_dim() const {
    return scenes.empty() ? 0 : scenes.front().observation_dim();
  }
};

/// Ground-truth-labelled training pair: regress the motion from the reference
/// sample's pose to the query sample's pose.
struct PairSpec {
  std::size_t query_index = 0;
  std::size_t reference_index = 0;
  RelativePose relative;
};

struct PairSet {
  std::vector<PairSpec> pairs;
  std::size_t skipped = 0;  // queries with no eligible neighbor
};

inline PairSet make_pairs(const Dataset& data, double max_dist, double max_angle_deg,
                          std::size_t pairs_per_sample, std::uint64_t seed) {
  if (max_dist <= 0.0 || max_angle_deg <= 0.0)
    throw std::invalid_argument("make_pairs: thresholds must be positive");
  PairSet out;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& q = data.samples[i];
    eligible.clear();
    for (std::size_t j = 0; j < data.samples.size(); ++j) {
      if (j == i || data.samples[j].scene_index != q.scene_index) continue;
      const Sample& r = data.samples[j];
      if ((q.pose.position - r.pose.position).norm() > max_dist) continue;
      if (angular_error_degrees(q.pose.orientation, r.pose.orientation) > max_angle_deg) continue;
      eligible.push_back(j);
    }
    if (eligible.empty()) {
      ++out.skipped;
      continue;
    }
    Rng rng(mix_seed(seed, mix_seed(fnv1a64("pairs"), i)));
    std::size_t take = std::min(pairs_per_sample, eligible.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::size_t pick = k + rng.index(eligible.size() - k);
      std::swap(eligible[k], eligible[pick]);
      PairSpec p;
      p.query_index = i;
      p.reference_index = eligible[k];
      p.relative = relative_pose(data.samples[eligible[k]].pose, data.samples[i].pose);
      p.relative.dq = p.relative.dq.canonicalized();
      out.pairs.push_back(p);
    }
  }
  return out;
}

/// Per-scene uniform sample without replacement of ceil(k*n/100) items.
inline Dataset subset_split(const Dataset& data, double k_percent, std::uint64_t seed) {
  if (k_percent <= 0.0 || k_percent > 100.0)
    throw std::invalid_argument("subset_split: k must be in (0, 100]");
  Dataset out;
  out.scenes = data.scenes;
  std::vector<std::vector<std::size_t>> by_scene(data.scenes.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    by_scene[data.samples[i].scene_index].push_back(i);
  std::vector<std::size_t> chosen;
  for (std::size_t s = 0; s < by_scene.size(); ++s) {
    auto& idx = by_scene[s];
    std::size_t m = static_cast<std::size_t>(
        std::ceil(k_percent * static_cast<double>(idx.size()) / 100.0));
    m = std::min(m, idx.size());
    Rng rng(mix_seed(seed, mix_seed(fnv1a64("subset"), s)));
    for (std::size_t k = 0; k < m; ++k) {
      std::size_t pick = k + rng.index(idx.size() - k);
      std::swap(idx[k], idx[pick]);
      chosen.push_back(idx[k]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) out.samples.push_back(data.samples[i]);
  return out;
}

}  // namespace paerpr
