#pragma once

#include "paerpr/layers.hpp"
#include "paerpr/scene.hpp"
#include "paerpr/train.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace paerpr {

/// Translation/rotation latent vectors of width C_d.
struct LatentPair {
  Tensor z_x;
  Tensor z_q;
};

struct AprConfig {
  std::size_t obs_dim = 192;
  std::size_t latent_dim = 256;  // C_d
  std::size_t enc_hidden = 512;
  std::size_t reg_hidden = 256;
  double s_x_init = 0.0;
  double s_q_init = -3.0;
};

struct AprOutput {
  LatentPair latents;
  Pose pose;
  Vec3 x_raw;
  Vec4 q_raw;
};

inline Quat quat_from_raw(const Vec4& q_raw) {
  if (q_raw.norm() < 1e-12) return Quat::identity();
  return Quat(q_raw[0], q_raw[1], q_raw[2], q_raw[3]);
}

/// Absolute pose regressor: observation encoder with FC latent heads, plus the
/// translation/rotation regressor MLPs that double as the PAE decoder.
struct AprModel {
  AprConfig cfg;
  nn::ParamSet params;
  nn::Mlp enc;
  nn::Linear head_x, head_q;
  nn::Mlp reg_x, reg_q;
  nn::Parameter* s_x = nullptr;
  nn::Parameter* s_q = nullptr;

  AprModel() = default;
  AprModel(const AprModel&) = delete;
  AprModel& operator=(const AprModel&) = delete;
  AprModel(AprModel&&) = default;
  AprModel& operator=(AprModel&&) = default;

  static AprModel create(const AprConfig& cfg, std::uint64_t seed) {
    AprModel m;
    m.cfg = cfg;
    Rng rng(mix_seed(seed, fnv1a64("apr")));
    m.enc = nn::Mlp::create(m.params, "apr/enc",
                            {cfg.obs_dim, cfg.enc_hidden, cfg.enc_hidden, cfg.latent_dim},
                            nn::Act::relu, true, rng);
    m.head_x = nn::Linear::create(m.params, "apr/head_x", cfg.latent_dim, cfg.latent_dim, rng);
    m.head_q = nn::Linear::create(m.params, "apr/head_q", cfg.latent_dim, cfg.latent_dim, rng);
    m.reg_x = nn::Mlp::create(m.params, "apr/reg_x",
                              {cfg.latent_dim, cfg.reg_hidden, cfg.reg_hidden, 3}, nn::Act::relu,
                              false, rng);
    m.reg_q = nn::Mlp::create(m.params, "apr/reg_q",
                              {cfg.latent_dim, cfg.reg_hidden, cfg.reg_hidden, 4}, nn::Act::relu,
                              false, rng);
    m.s_x = &m.params.add("apr/s_x", Tensor::scalar(cfg.s_x_init));
    m.s_q = &m.params.add("apr/s_q", Tensor::scalar(cfg.s_q_init));
    return m;
  }

  // latent heads: z_x, z_q = ReLU(FC(enc(obs)))
  std::pair<nn::Node*, nn::Node*> latents_node(nn::Tape& t, nn::Node* obs, bool froze = false) const {
    nn::Node* h = enc(t, obs, froze);
    return {nn::relu(t, head_x(t, h, froze)), nn::relu(t, head_q(t, h, froze))};
  }

  // regressor tail shared by apr_forward and decode_latents
  std::pair<nn::Node*, nn::Node*> decode_node(nn::Tape& t, nn::Node* z_x, nn::Node* z_q,
                                              bool froze = false) const {
    return {reg_x(t, z_x, froze), reg_q(t, z_q, froze)};
  }

  void check_obs(const Observation& obs) const {
    if (obs.values.size() != cfg.obs_dim)
      throw std::invalid_argument("apr_forward: observation length " +
                                  std::to_string(obs.values.size()) + " != " +
                                  std::to_string(cfg.obs_dim));
  }

  AprOutput forward(const Observation& obs) const {
    check_obs(obs);
    nn::Tape t;
    nn::Node* in = t.constant(Tensor({1, cfg.obs_dim}, obs.values));
    auto [zx, zq] = latents_node(t, in, true);
    auto [x, q] = decode_node(t, zx, zq, true);
    AprOutput out;
    out.latents.z_x = Tensor({cfg.latent_dim}, zx->val.data);
    out.latents.z_q = Tensor({cfg.latent_dim}, zq->val.data);
    out.x_raw = Vec3(x->val[0], x->val[1], x->val[2]);
    out.q_raw = Vec4(q->val[0], q->val[1], q->val[2], q->val[3]);
    out.pose.position = out.x_raw;
    out.pose.orientation = quat_from_raw(out.q_raw);
    return out;
  }

  std::vector<AprOutput> forward_batch(const Dataset& data, const std::vector<std::size_t>& idx) const {
    nn::Tape t;
    nn::Node* in = t.constant(observation_matrix(data, idx));
    auto [zx, zq] = latents_node(t, in, true);
    auto [x, q] = decode_node(t, zx, zq, true);
    std::vector<AprOutput> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out[r].latents.z_x = Tensor({cfg.latent_dim});
      out[r].latents.z_q = Tensor({cfg.latent_dim});
      for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
        out[r].latents.z_x[c] = zx->val(r, c);
        out[r].latents.z_q[c] = zq->val(r, c);
      }
      out[r].x_raw = Vec3(x->val(r, 0), x->val(r, 1), x->val(r, 2));
      out[r].q_raw = Vec4(q->val(r, 0), q->val(r, 1), q->val(r, 2), q->val(r, 3));
      out[r].pose.position = out[r].x_raw;
      out[r].pose.orientation = quat_from_raw(out[r].q_raw);
    }
    return out;
  }

  /// Decode latents through the regressor MLPs only; identical code path to
  /// the tail of forward().
  std::pair<Vec3, Vec4> decode_raw(const LatentPair& latents) const {
    if (latents.z_x.size() != cfg.latent_dim || latents.z_q.size() != cfg.latent_dim)
      throw std::invalid_argument("decode_latents: latent width mismatch");
    nn::Tape t;
    nn::Node* zx = t.constant(Tensor({1, cfg.latent_dim}, latents.z_x.data));
    nn::Node* zq = t.constant(Tensor({1, cfg.latent_dim}, latents.z_q.data));
    auto [x, q] = decode_node(t, zx, zq, true);
    return {Vec3(x->val[0], x->val[1], x->val[2]),
            Vec4(q->val[0], q->val[1], q->val[2], q->val[3])};
  }

  Pose decode_latents(const LatentPair& latents) const {
    auto [x, q] = decode_raw(latents);
    Pose p;
    p.position = x;
    p.orientation = quat_from_raw(q);
    return p;
  }

  UncertaintyParams uncertainty() const { return {s_x->value[0], s_q->value[0]}; }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : params.storage) out.emplace_back(p.name, &p.value);
    return out;
  }
};

inline TrainLog train_apr(AprModel& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.samples.empty()) throw std::invalid_argument("train_apr: empty dataset");
  nn::AdamState adam({cfg.learning_rate});
  auto trainable = model.params.all();
  TrainLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(data.samples.size(),
                                  mix_seed(cfg.seed, mix_seed(fnv1a64("apr_shuffle"), epoch)));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + std::min(start + cfg.batch_size, order.size()));
      nn::Tape t;
      nn::Node* obs = t.constant(observation_matrix(data, idx));
      auto [zx, zq] = model.latents_node(t, obs);
      auto [x, q] = model.decode_node(t, zx, zq);
      nn::Node* loss = pose_loss_node(t, x, t.constant(position_matrix(data, idx)), q,
                                      t.constant(quaternion_matrix(data, idx)),
                                      t.param(*model.s_x), t.param(*model.s_q));
      model.params.zero_grads();
      t.backward(loss);
      nn::adam_step(trainable, adam);
      loss_sum += loss->val[0];
      ++batches;
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return log;
}

}  // namespace paerpr
