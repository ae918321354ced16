#pragma once

#include "paerpr/pae.hpp"

#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace paerpr {

struct RprConfig {
  std::size_t obs_dim = 192;
  std::size_t latent_dim = 256;  // C_d
  std::size_t enc_hidden = 512;
  std::size_t reg_hidden = 256;
  double s_x_init = 0.0;
  double s_q_init = -3.0;
};

inline RelativePose relative_from_raw(const Vec3& dx, const Vec4& dq_raw) {
  RelativePose d;
  d.dx = dx;
  d.dq = quat_from_raw(dq_raw);
  return d;
}

/// Image-based relative pose regressor: one shared encoder and latent heads
/// applied to both observations, concatenated per branch, then separate
/// translation/rotation MLPs.
struct ImageRprModel {
  RprConfig cfg;
  nn::ParamSet params;
  nn::Mlp enc;
  nn::Linear head_x, head_q;
  nn::Mlp reg_x, reg_q;
  nn::Parameter* s_x = nullptr;
  nn::Parameter* s_q = nullptr;

  ImageRprModel() = default;
  ImageRprModel(const ImageRprModel&) = delete;
  ImageRprModel& operator=(const ImageRprModel&) = delete;
  ImageRprModel(ImageRprModel&&) = default;
  ImageRprModel& operator=(ImageRprModel&&) = default;

  static ImageRprModel create(const RprConfig& cfg, std::uint64_t seed) {
    ImageRprModel m;
    m.cfg = cfg;
    Rng rng(mix_seed(seed, fnv1a64("rpr_img")));
    m.enc = nn::Mlp::create(m.params, "rpr_img/enc",
                            {cfg.obs_dim, cfg.enc_hidden, cfg.enc_hidden, cfg.latent_dim},
                            nn::Act::relu, true, rng);
    m.head_x = nn::Linear::create(m.params, "rpr_img/head_x", cfg.latent_dim, cfg.latent_dim, rng);
    m.head_q = nn::Linear::create(m.params, "rpr_img/head_q", cfg.latent_dim, cfg.latent_dim, rng);
    m.reg_x = nn::Mlp::create(m.params, "rpr_img/reg_x",
                              {2 * cfg.latent_dim, cfg.reg_hidden, cfg.reg_hidden, 3},
                              nn::Act::relu, false, rng);
    m.reg_q = nn::Mlp::create(m.params, "rpr_img/reg_q",
                              {2 * cfg.latent_dim, cfg.reg_hidden, cfg.reg_hidden, 4},
                              nn::Act::relu, false, rng);
    m.s_x = &m.params.add("rpr_img/s_x", Tensor::scalar(cfg.s_x_init));
    m.s_q = &m.params.add("rpr_img/s_q", Tensor::scalar(cfg.s_q_init));
    return m;
  }

  std::pair<nn::Node*, nn::Node*> obs_latents(nn::Tape& t, nn::Node* obs, bool froze = false) const {
    nn::Node* h = enc(t, obs, froze);
    return {nn::relu(t, head_x(t, h, froze)), nn::relu(t, head_q(t, h, froze))};
  }

  std::pair<nn::Node*, nn::Node*> delta_node(nn::Tape& t, nn::Node* obs_q, nn::Node* obs_r,
                                             bool froze = false) const {
    auto [qx, qq] = obs_latents(t, obs_q, froze);
    auto [rx, rq] = obs_latents(t, obs_r, froze);
    nn::Node* dx = reg_x(t, nn::concat_cols(t, qx, rx), froze);
    nn::Node* dq = reg_q(t, nn::concat_cols(t, qq, rq), froze);
    return {dx, dq};
  }

  void check_obs(const Observation& obs) const {
    if (obs.values.size() != cfg.obs_dim)
      throw std::invalid_argument("image_rpr_forward: observation length mismatch");
  }

  RelativePose forward(const Observation& query, const Observation& reference) const {
    check_obs(query);
    check_obs(reference);
    nn::Tape t;
    auto [dx, dq] = delta_node(t, t.constant(Tensor({1, cfg.obs_dim}, query.values)),
                               t.constant(Tensor({1, cfg.obs_dim}, reference.values)), true);
    return relative_from_raw(Vec3(dx->val[0], dx->val[1], dx->val[2]),
                             Vec4(dq->val[0], dq->val[1], dq->val[2], dq->val[3]));
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : params.storage) out.emplace_back(p.name, &p.value);
    return out;
  }
};

/// Concatenation PAE-based RPR: the reference observation is replaced by the
/// frozen PAE's encoding of the reference pose, passed through trainable FC
/// heads; everything downstream matches ImageRprModel.
struct PaeRprModel {
  RprConfig cfg;
  std::shared_ptr<const PaeModel> pae;
  nn::ParamSet params;
  nn::Mlp enc;
  nn::Linear head_x, head_q;
  nn::Linear ref_head_x, ref_head_q;
  nn::Mlp reg_x, reg_q;
  nn::Parameter* s_x = nullptr;
  nn::Parameter* s_q = nullptr;

  PaeRprModel() = default;
  PaeRprModel(const PaeRprModel&) = delete;
  PaeRprModel& operator=(const PaeRprModel&) = delete;
  PaeRprModel(PaeRprModel&&) = default;
  PaeRprModel& operator=(PaeRprModel&&) = default;

  static PaeRprModel create(const RprConfig& cfg, std::shared_ptr<const PaeModel> pae,
                            std::uint64_t seed) {
    if (!pae) throw std::invalid_argument("pae rpr: missing PAE");
    if (pae->cfg.latent_dim != cfg.latent_dim)
      throw std::invalid_argument("pae rpr: PAE latent width mismatch");
    PaeRprModel m;
    m.cfg = cfg;
    m.pae = std::move(pae);
    Rng rng(mix_seed(seed, fnv1a64("rpr_pae")));
    m.enc = nn::Mlp::create(m.params, "rpr_pae/enc",
                            {cfg.obs_dim, cfg.enc_hidden, cfg.enc_hidden, cfg.latent_dim},
                            nn::Act::relu, true, rng);
    m.head_x = nn::Linear::create(m.params, "rpr_pae/head_x", cfg.latent_dim, cfg.latent_dim, rng);
    m.head_q = nn::Linear::create(m.params, "rpr_pae/head_q", cfg.latent_dim, cfg.latent_dim, rng);
    m.ref_head_x =
        nn::Linear::create(m.params, "rpr_pae/ref_head_x", cfg.latent_dim, cfg.latent_dim, rng);
    m.ref_head_q =
        nn::Linear::create(m.params, "rpr_pae/ref_head_q", cfg.latent_dim, cfg.latent_dim, rng);
    m.reg_x = nn::Mlp::create(m.params, "rpr_pae/reg_x",
                              {2 * cfg.latent_dim, cfg.reg_hidden, cfg.reg_hidden, 3},
                              nn::Act::relu, false, rng);
    m.reg_q = nn::Mlp::create(m.params, "rpr_pae/reg_q",
                              {2 * cfg.latent_dim, cfg.reg_hidden, cfg.reg_hidden, 4},
                              nn::Act::relu, false, rng);
    m.s_x = &m.params.add("rpr_pae/s_x", Tensor::scalar(cfg.s_x_init));
    m.s_q = &m.params.add("rpr_pae/s_q", Tensor::scalar(cfg.s_q_init));
    return m;
  }

  /// pae_x/pae_q are the frozen PAE's latents for the reference poses,
  /// entering the graph as constants.
  std::pair<nn::Node*, nn::Node*> delta_node(nn::Tape& t, nn::Node* obs_q, nn::Node* pae_x,
                                             nn::Node* pae_q, bool froze = false) const {
    nn::Node* h = enc(t, obs_q, froze);
    nn::Node* qx = nn::relu(t, head_x(t, h, froze));
    nn::Node* qq = nn::relu(t, head_q(t, h, froze));
    nn::Node* rx = nn::relu(t, ref_head_x(t, pae_x, froze));
    nn::Node* rq = nn::relu(t, ref_head_q(t, pae_q, froze));
    nn::Node* dx = reg_x(t, nn::concat_cols(t, qx, rx), froze);
    nn::Node* dq = reg_q(t, nn::concat_cols(t, qq, rq), froze);
    return {dx, dq};
  }

  RelativePose forward(const Observation& query, const Pose& reference_pose,
                       std::size_t scene_index) const {
    if (query.values.size() != cfg.obs_dim)
      throw std::invalid_argument("pae_rpr_forward: observation length mismatch");
    LatentPair lat = pae->encode_pose(reference_pose, scene_index);
    nn::Tape t;
    auto [dx, dq] = delta_node(t, t.constant(Tensor({1, cfg.obs_dim}, query.values)),
                               t.constant(Tensor({1, cfg.latent_dim}, lat.z_x.data)),
                               t.constant(Tensor({1, cfg.latent_dim}, lat.z_q.data)), true);
    return relative_from_raw(Vec3(dx->val[0], dx->val[1], dx->val[2]),
                             Vec4(dq->val[0], dq->val[1], dq->val[2], dq->val[3]));
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : params.storage) out.emplace_back(p.name, &p.value);
    return out;
  }
};

/// Transformer PAE-based RPR: image latents, PAE latents and two learned
/// tokens form a 6 x C_d sequence fed through a pre-LN encoder; the token
/// outputs are regressed to the relative pose by separate MLP heads.
struct TransformerRprModel {
  static constexpr std::size_t kSeqLen = 6;
  static constexpr std::size_t kTransToken = 4;
  static constexpr std::size_t kRotToken = 5;

  RprConfig cfg;
  nn::TransformerConfig tf_cfg;
  std::shared_ptr<const PaeModel> pae;
  nn::ParamSet params;
  nn::Mlp enc;
  nn::Linear head_x, head_q;
  nn::Parameter* t_trans = nullptr;
  nn::Parameter* t_rot = nullptr;
  nn::TransformerEncoder encoder;
  nn::Mlp out_x, out_q;
  nn::Parameter* s_x = nullptr;
  nn::Parameter* s_q = nullptr;
  std::uint64_t dropout_seed = 0;

  TransformerRprModel() = default;
  TransformerRprModel(const TransformerRprModel&) = delete;
  TransformerRprModel& operator=(const TransformerRprModel&) = delete;
  TransformerRprModel(TransformerRprModel&&) = default;
  TransformerRprModel& operator=(TransformerRprModel&&) = default;

  static TransformerRprModel create(const RprConfig& cfg, const nn::TransformerConfig& tf_cfg,
                                    std::shared_ptr<const PaeModel> pae, std::uint64_t seed) {
    if (!pae) throw std::invalid_argument("transformer rpr: missing PAE");
    if (pae->cfg.latent_dim != cfg.latent_dim || tf_cfg.model_dim != cfg.latent_dim)
      throw std::invalid_argument("transformer rpr: latent width mismatch");
    tf_cfg.validate();
    TransformerRprModel m;
    m.cfg = cfg;
    m.tf_cfg = tf_cfg;
    m.pae = std::move(pae);
    m.dropout_seed = mix_seed(seed, fnv1a64("rpr_tf/dropout"));
    Rng rng(mix_seed(seed, fnv1a64("rpr_tf")));
    m.enc = nn::Mlp::create(m.params, "rpr_tf/enc",
                            {cfg.obs_dim, cfg.enc_hidden, cfg.enc_hidden, cfg.latent_dim},
                            nn::Act::relu, true, rng);
    m.head_x = nn::Linear::create(m.params, "rpr_tf/head_x", cfg.latent_dim, cfg.latent_dim, rng);
    m.head_q = nn::Linear::create(m.params, "rpr_tf/head_q", cfg.latent_dim, cfg.latent_dim, rng);
    m.t_trans = &m.params.add("rpr_tf/t_trans", nn::normal_init({cfg.latent_dim}, 0.02, rng));
    m.t_rot = &m.params.add("rpr_tf/t_rot", nn::normal_init({cfg.latent_dim}, 0.02, rng));
    m.encoder = nn::TransformerEncoder::create(m.params, "rpr_tf/encoder", tf_cfg, rng);
    m.out_x = nn::Mlp::create(m.params, "rpr_tf/out_x", {cfg.latent_dim, cfg.reg_hidden, 3},
                              nn::Act::gelu, false, rng);
    m.out_q = nn::Mlp::create(m.params, "rpr_tf/out_q", {cfg.latent_dim, cfg.reg_hidden, 4},
                              nn::Act::gelu, false, rng);
    m.s_x = &m.params.add("rpr_tf/s_x", Tensor::scalar(cfg.s_x_init));
    m.s_q = &m.params.add("rpr_tf/s_q", Tensor::scalar(cfg.s_q_init));
    return m;
  }

  /// Assemble the batched 6-token sequence [z_x_img, z_q_img, z_x_pae,
  /// z_q_pae, t_trans, t_rot].
  nn::Node* sequence_node(nn::Tape& t, nn::Node* obs_q, nn::Node* pae_x, nn::Node* pae_q,
                          const nn::FwdCtx& ctx) const {
    std::size_t n = obs_q->val.rows();
    nn::Node* h = enc(t, obs_q, ctx.froze);
    nn::Node* zx_img = nn::relu(t, head_x(t, h, ctx.froze));
    nn::Node* zq_img = nn::relu(t, head_q(t, h, ctx.froze));
    nn::Node* tok_t = nn::broadcast_row(t, ctx.froze ? t.frozen(*t_trans) : t.param(*t_trans), n);
    nn::Node* tok_r = nn::broadcast_row(t, ctx.froze ? t.frozen(*t_rot) : t.param(*t_rot), n);
    return nn::interleave_rows(t, {zx_img, zq_img, pae_x, pae_q, tok_t, tok_r});
  }

  std::pair<nn::Node*, nn::Node*> delta_node(nn::Tape& t, nn::Node* obs_q, nn::Node* pae_x,
                                             nn::Node* pae_q, const nn::FwdCtx& ctx) const {
    std::size_t n = obs_q->val.rows();
    nn::Node* seq = sequence_node(t, obs_q, pae_x, pae_q, ctx);
    seq = encoder(t, seq, n, kSeqLen, ctx);
    nn::Node* dx = out_x(t, nn::extract_token(t, seq, kTransToken, kSeqLen), ctx.froze);
    nn::Node* dq = out_q(t, nn::extract_token(t, seq, kRotToken, kSeqLen), ctx.froze);
    return {dx, dq};
  }

  RelativePose forward(const Observation& query, const Pose& reference_pose,
                       std::size_t scene_index) const {
    std::vector<RelativePose> out =
        forward_batch({query.values}, {reference_pose}, {scene_index});
    return out.front();
  }

  std::vector<RelativePose> forward_batch(const std::vector<std::vector<double>>& queries,
                                          const std::vector<Pose>& reference_poses,
                                          const std::vector<std::size_t>& scene_idx) const {
    std::size_t n = queries.size();
    Tensor obs({n, cfg.obs_dim});
    for (std::size_t r = 0; r < n; ++r) {
      if (queries[r].size() != cfg.obs_dim)
        throw std::invalid_argument("pae_rpr_forward: observation length mismatch");
      for (std::size_t c = 0; c < cfg.obs_dim; ++c) obs(r, c) = queries[r][c];
    }
    std::vector<LatentPair> lat = pae->encode_batch(reference_poses, scene_idx);
    Tensor px({n, cfg.latent_dim}), pq({n, cfg.latent_dim});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
        px(r, c) = lat[r].z_x[c];
        pq(r, c) = lat[r].z_q[c];
      }
    nn::Tape t;
    nn::FwdCtx ctx;
    ctx.froze = true;
    auto [dx, dq] = delta_node(t, t.constant(std::move(obs)), t.constant(std::move(px)),
                               t.constant(std::move(pq)), ctx);
    std::vector<RelativePose> out(n);
    for (std::size_t r = 0; r < n; ++r)
      out[r] = relative_from_raw(Vec3(dx->val(r, 0), dx->val(r, 1), dx->val(r, 2)),
                                 Vec4(dq->val(r, 0), dq->val(r, 1), dq->val(r, 2), dq->val(r, 3)));
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : params.storage) out.emplace_back(p.name, &p.value);
    return out;
  }
};

// ---- RPR training -------------------------------------------------------------

inline Tensor pair_dx_matrix(const std::vector<PairSpec>& pairs, const std::vector<std::size_t>& idx) {
  Tensor m({idx.size(), 3});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = pairs[idx[r]].relative.dx[c];
  return m;
}

inline Tensor pair_dq_matrix(const std::vector<PairSpec>& pairs, const std::vector<std::size_t>& idx) {
  Tensor m({idx.size(), 4});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Quat& q = pairs[idx[r]].relative.dq;
    m(r, 0) = q.w;
    m(r, 1) = q.x;
    m(r, 2) = q.y;
    m(r, 3) = q.z;
  }
  return m;
}

namespace detail {

inline Tensor gather_obs(const Dataset& data, const std::vector<PairSpec>& pairs,
                         const std::vector<std::size_t>& idx, bool query_side) {
  std::size_t dim = data.observation_dim();
  Tensor m({idx.size(), dim});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const PairSpec& p = pairs[idx[r]];
    const Sample& s = data.samples[query_side ? p.query_index : p.reference_index];
    for (std::size_t c = 0; c < dim; ++c) m(r, c) = s.observation.values[c];
  }
  return m;
}

/// PAE latents for every sample that appears as a reference, computed once.
struct RefLatentCache {
  Tensor z_x, z_q;  // [num_samples x C_d], rows valid only for referenced samples

  static RefLatentCache build(const PaeModel& pae, const Dataset& data,
                              const std::vector<PairSpec>& pairs) {
    std::vector<char> used(data.samples.size(), 0);
    for (const auto& p : pairs) used[p.reference_index] = 1;
    std::vector<Pose> poses;
    std::vector<std::size_t> scenes, rows;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      if (!used[i]) continue;
      poses.push_back(data.samples[i].pose);
      scenes.push_back(data.samples[i].scene_index);
      rows.push_back(i);
    }
    RefLatentCache cache;
    cache.z_x = Tensor({data.samples.size(), pae.cfg.latent_dim});
    cache.z_q = Tensor({data.samples.size(), pae.cfg.latent_dim});
    auto lat = pae.encode_batch(poses, scenes);
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t c = 0; c < pae.cfg.latent_dim; ++c) {
        cache.z_x(rows[k], c) = lat[k].z_x[c];
        cache.z_q(rows[k], c) = lat[k].z_q[c];
      }
    return cache;
  }

  std::pair<Tensor, Tensor> batch(const std::vector<PairSpec>& pairs,
                                  const std::vector<std::size_t>& idx) const {
    std::size_t cd = z_x.cols();
    Tensor bx({idx.size(), cd}), bq({idx.size(), cd});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t ref = pairs[idx[r]].reference_index;
      for (std::size_t c = 0; c < cd; ++c) {
        bx(r, c) = z_x(ref, c);
        bq(r, c) = z_q(ref, c);
      }
    }
    return {std::move(bx), std::move(bq)};
  }
};

template <typename BatchLoss>
TrainLog run_pair_training(std::size_t num_pairs, const TrainConfig& cfg, const char* shuffle_tag,
                           nn::ParamSet& params, BatchLoss&& batch_loss) {
  if (num_pairs == 0) throw std::invalid_argument("train_regressor: no training pairs");
  nn::AdamState adam({cfg.learning_rate});
  auto trainable = params.all();
  TrainLog log;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(num_pairs, mix_seed(cfg.seed, mix_seed(fnv1a64(shuffle_tag), epoch)));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + std::min(start + cfg.batch_size, order.size()));
      nn::Tape t;
      nn::Node* loss = batch_loss(t, idx, step);
      params.zero_grads();
      t.backward(loss);
      nn::adam_step(trainable, adam);
      loss_sum += loss->val[0];
      ++batches;
      ++step;
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return log;
}

}  // namespace detail

inline TrainLog train_image_rpr(ImageRprModel& model, const Dataset& data,
                                const std::vector<PairSpec>& pairs, const TrainConfig& cfg) {
  return detail::run_pair_training(
      pairs.size(), cfg, "rpr_img_shuffle", model.params,
      [&](nn::Tape& t, const std::vector<std::size_t>& idx, std::uint64_t) {
        nn::Node* obs_q = t.constant(detail::gather_obs(data, pairs, idx, true));
        nn::Node* obs_r = t.constant(detail::gather_obs(data, pairs, idx, false));
        auto [dx, dq] = model.delta_node(t, obs_q, obs_r);
        return pose_loss_node(t, dx, t.constant(pair_dx_matrix(pairs, idx)), dq,
                              t.constant(pair_dq_matrix(pairs, idx)), t.param(*model.s_x),
                              t.param(*model.s_q));
      });
}

inline TrainLog train_pae_rpr(PaeRprModel& model, const Dataset& data,
                              const std::vector<PairSpec>& pairs, const TrainConfig& cfg) {
  auto cache = detail::RefLatentCache::build(*model.pae, data, pairs);
  return detail::run_pair_training(
      pairs.size(), cfg, "rpr_pae_shuffle", model.params,
      [&](nn::Tape& t, const std::vector<std::size_t>& idx, std::uint64_t) {
        nn::Node* obs_q = t.constant(detail::gather_obs(data, pairs, idx, true));
        auto [px, pq] = cache.batch(pairs, idx);
        auto [dx, dq] = model.delta_node(t, obs_q, t.constant(std::move(px)),
                                         t.constant(std::move(pq)));
        return pose_loss_node(t, dx, t.constant(pair_dx_matrix(pairs, idx)), dq,
                              t.constant(pair_dq_matrix(pairs, idx)), t.param(*model.s_x),
                              t.param(*model.s_q));
      });
}

inline TrainLog train_transformer_rpr(TransformerRprModel& model, const Dataset& data,
                                      const std::vector<PairSpec>& pairs, const TrainConfig& cfg) {
  auto cache = detail::RefLatentCache::build(*model.pae, data, pairs);
  return detail::run_pair_training(
      pairs.size(), cfg, "rpr_tf_shuffle", model.params,
      [&](nn::Tape& t, const std::vector<std::size_t>& idx, std::uint64_t step) {
        nn::Node* obs_q = t.constant(detail::gather_obs(data, pairs, idx, true));
        auto [px, pq] = cache.batch(pairs, idx);
        nn::FwdCtx ctx;
        ctx.train = true;
        ctx.seed = model.dropout_seed;
        ctx.step = step;
        auto [dx, dq] = model.delta_node(t, obs_q, t.constant(std::move(px)),
                                         t.constant(std::move(pq)), ctx);
        return pose_loss_node(t, dx, t.constant(pair_dx_matrix(pairs, idx)), dq,
                              t.constant(pair_dq_matrix(pairs, idx)), t.param(*model.s_x),
                              t.param(*model.s_q));
      });
}

}  // namespace paerpr
