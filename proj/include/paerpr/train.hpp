#pragma once

#include "paerpr/adam.hpp"
#include "paerpr/autodiff.hpp"
#include "paerpr/pose.hpp"
#include "paerpr/rng.hpp"
#include "paerpr/scene.hpp"

#include <cstdint>
#include <vector>

namespace paerpr {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean loss per epoch

  double initial() const { return epoch_loss.empty() ? 0.0 : epoch_loss.front(); }
  double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  return idx;
}

// ---- batch assembly ---------------------------------------------------------

inline Tensor observation_matrix(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::size_t dim = data.observation_dim();
  Tensor m({idx.size(), dim});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) m(r, c) = data.samples[idx[r]].observation.values[c];
  return m;
}

inline Tensor position_matrix(const Dataset& data, const std::vector<std::size_t>& idx) {
  Tensor m({idx.size(), 3});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = data.samples[idx[r]].pose.position[c];
  return m;
}

/// Ground-truth quaternions, sign-canonicalized to the w >= 0 hemisphere.
inline Tensor quaternion_matrix(const Dataset& data, const std::vector<std::size_t>& idx) {
  Tensor m({idx.size(), 4});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    Quat q = data.samples[idx[r]].pose.orientation.canonicalized();
    m(r, 0) = q.w;
    m(r, 1) = q.x;
    m(r, 2) = q.y;
    m(r, 3) = q.z;
  }
  return m;
}

// ---- loss graph -------------------------------------------------------------

/// Batch-mean homoscedastic pose loss (position L2 plus chordal orientation
/// term, weighted by learned log-variances). x_pred [n x 3]; q_raw [n x 4];
/// targets are constants of the same shapes.
inline nn::Node* pose_loss_node(nn::Tape& t, nn::Node* x_pred, nn::Node* x_target,
                                nn::Node* q_raw, nn::Node* q_target, nn::Node* s_x,
                                nn::Node* s_q) {
  using namespace nn;
  Node* l_x = mean_all(t, l2norm_rows(t, sub(t, x_pred, x_target)));
  Node* l_q = mean_all(t, l2norm_rows(t, sub(t, normalize_rows(t, q_raw), q_target)));
  Node* wx = hadamard(t, l_x, exp_ew(t, scale(t, s_x, -1.0)));
  Node* wq = hadamard(t, l_q, exp_ew(t, scale(t, s_q, -1.0)));
  return add(t, add(t, wx, s_x), add(t, wq, s_q));
}

}  // namespace paerpr
