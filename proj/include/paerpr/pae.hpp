#pragma once

#include "paerpr/apr.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace paerpr {

/// NeRF-style sinusoidal bands: sin(2^k * base * v), cos(2^k * base * v) for
/// k = 0..num_bands-1, elementwise over v.
struct FourierSpec {
  std::size_t num_bands = 6;
  double base_freq = kPi;

  std::size_t encoded_dim(std::size_t d) const { return 2 * num_bands * d; }
};

inline std::vector<double> fourier_encode(const std::vector<double>& v, const FourierSpec& spec) {
  std::vector<double> out;
  out.reserve(spec.encoded_dim(v.size()));
  double freq = spec.base_freq;
  for (std::size_t k = 0; k < spec.num_bands; ++k) {
    for (double x : v) out.push_back(std::sin(freq * x));
    for (double x : v) out.push_back(std::cos(freq * x));
    freq *= 2.0;
  }
  return out;
}

struct PaeConfig {
  FourierSpec fourier;
  std::size_t latent_dim = 256;  // C_d, must match the teacher
  std::size_t hidden = 256;
  std::size_t num_layers = 4;
  double s_x_init = 0.0;
  double s_q_init = -3.0;

  std::size_t embed_dim() const { return latent_dim / 4; }
};

/// Camera pose auto-encoder: encodes (pose, scene index) into latents the
/// teacher APR's regressor heads can decode. Positions are normalized to
/// [-1,1] per scene before the sinusoidal encoding.
struct PaeModel {
  PaeConfig cfg;
  std::size_t num_scenes = 0;
  Tensor norm_center;  // [num_scenes x 3]
  Tensor norm_scale;   // [num_scenes x 3], 1 / half-extent
  nn::ParamSet params;
  nn::Parameter* scene_embed = nullptr;
  nn::Mlp branch_x, branch_q;
  nn::Parameter* s_x = nullptr;
  nn::Parameter* s_q = nullptr;

  PaeModel() = default;
  PaeModel(const PaeModel&) = delete;
  PaeModel& operator=(const PaeModel&) = delete;
  PaeModel(PaeModel&&) = default;
  PaeModel& operator=(PaeModel&&) = default;

  static PaeModel create(const PaeConfig& cfg, const std::vector<SceneSpec>& scenes,
                         std::uint64_t seed) {
    if (scenes.empty()) throw std::invalid_argument("pae: need at least one scene");
    PaeModel m;
    m.cfg = cfg;
    m.num_scenes = scenes.size();
    m.norm_center = Tensor({scenes.size(), 3});
    m.norm_scale = Tensor({scenes.size(), 3});
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      Vec3 c = scenes[s].bounds.center(), h = scenes[s].bounds.half_extent();
      for (int a = 0; a < 3; ++a) {
        m.norm_center(s, a) = c[a];
        m.norm_scale(s, a) = 1.0 / h[a];
      }
    }
    quantize_f32(m.norm_center);
    quantize_f32(m.norm_scale);

    Rng rng(mix_seed(seed, fnv1a64("pae")));
    m.scene_embed = &m.params.add(
        "pae/scene_embed", nn::normal_init({scenes.size(), cfg.embed_dim()}, 0.02, rng));
    std::vector<std::size_t> dims_x{cfg.fourier.encoded_dim(3) + cfg.embed_dim()};
    std::vector<std::size_t> dims_q{cfg.fourier.encoded_dim(4) + cfg.embed_dim()};
    for (std::size_t l = 1; l < cfg.num_layers; ++l) {
      dims_x.push_back(cfg.hidden);
      dims_q.push_back(cfg.hidden);
    }
    dims_x.push_back(cfg.latent_dim);
    dims_q.push_back(cfg.latent_dim);
    m.branch_x = nn::Mlp::create(m.params, "pae/branch_x", dims_x, nn::Act::relu, false, rng);
    m.branch_q = nn::Mlp::create(m.params, "pae/branch_q", dims_q, nn::Act::relu, false, rng);
    m.s_x = &m.params.add("pae/s_x", Tensor::scalar(cfg.s_x_init));
    m.s_q = &m.params.add("pae/s_q", Tensor::scalar(cfg.s_q_init));
    return m;
  }

  void check_scene(std::size_t scene_index) const {
    if (scene_index >= num_scenes)
      throw std::out_of_range("pae: unknown scene index " + std::to_string(scene_index));
  }

  std::vector<double> position_features(const Pose& pose, std::size_t scene_index) const {
    std::vector<double> xn(3);
    for (int a = 0; a < 3; ++a)
      xn[a] = (pose.position[a] - norm_center(scene_index, a)) * norm_scale(scene_index, a);
    return fourier_encode(xn, cfg.fourier);
  }

  std::vector<double> orientation_features(const Pose& pose) const {
    Quat q = pose.orientation.canonicalized();
    return fourier_encode({q.w, q.x, q.y, q.z}, cfg.fourier);
  }

  /// Batched encoder graph; scene embedding rows participate in gradients
  /// unless froze is set.
  std::pair<nn::Node*, nn::Node*> latents_node(nn::Tape& t, const std::vector<Pose>& poses,
                                               const std::vector<std::size_t>& scene_idx,
                                               bool froze = false) const {
    std::size_t n = poses.size();
    std::size_t fx = cfg.fourier.encoded_dim(3), fq = cfg.fourier.encoded_dim(4);
    Tensor feat_x({n, fx}), feat_q({n, fq});
    for (std::size_t r = 0; r < n; ++r) {
      check_scene(scene_idx[r]);
      auto px = position_features(poses[r], scene_idx[r]);
      auto pq = orientation_features(poses[r]);
      for (std::size_t c = 0; c < fx; ++c) feat_x(r, c) = px[c];
      for (std::size_t c = 0; c < fq; ++c) feat_q(r, c) = pq[c];
    }
    nn::Node* table = froze ? t.frozen(*scene_embed) : t.param(*scene_embed);
    nn::Node* emb = nn::gather_rows(t, table, scene_idx);
    nn::Node* zx = branch_x(t, nn::concat_cols(t, t.constant(std::move(feat_x)), emb), froze);
    nn::Node* zq = branch_q(t, nn::concat_cols(t, t.constant(std::move(feat_q)), emb), froze);
    return {zx, zq};
  }

  LatentPair encode_pose(const Pose& pose, std::size_t scene_index) const {
    check_scene(scene_index);
    nn::Tape t;
    auto [zx, zq] = latents_node(t, {pose}, {scene_index}, true);
    LatentPair out;
    out.z_x = Tensor({cfg.latent_dim}, zx->val.data);
    out.z_q = Tensor({cfg.latent_dim}, zq->val.data);
    return out;
  }

  std::vector<LatentPair> encode_batch(const std::vector<Pose>& poses,
                                       const std::vector<std::size_t>& scene_idx) const {
    nn::Tape t;
    auto [zx, zq] = latents_node(t, poses, scene_idx, true);
    std::vector<LatentPair> out(poses.size());
    for (std::size_t r = 0; r < poses.size(); ++r) {
      out[r].z_x = Tensor({cfg.latent_dim});
      out[r].z_q = Tensor({cfg.latent_dim});
      for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
        out[r].z_x[c] = zx->val(r, c);
        out[r].z_q[c] = zq->val(r, c);
      }
    }
    return out;
  }

  UncertaintyParams uncertainty() const { return {s_x->value[0], s_q->value[0]}; }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("pae/norm/center", &norm_center);
    out.emplace_back("pae/norm/scale", &norm_scale);
    for (auto& p : params.storage) out.emplace_back(p.name, &p.value);
    return out;
  }
};

/// Distillation loss: ||z_x - zhat_x|| + ||z_q - zhat_q|| + L_p, where L_p is
/// the homoscedastic pose loss of the decoded pose against ground truth.
/// Plain arithmetic mirror of the training graph.
inline double pae_training_loss(const LatentPair& student, const LatentPair& teacher,
                                const Vec3& decoded_x, const Vec4& decoded_q_raw, const Pose& gt,
                                const UncertaintyParams& s) {
  if (student.z_x.size() != teacher.z_x.size() || student.z_q.size() != teacher.z_q.size())
    throw std::invalid_argument("pae_training_loss: latent width mismatch");
  double lat_x = 0.0, lat_q = 0.0;
  for (std::size_t i = 0; i < student.z_x.size(); ++i) {
    double d = teacher.z_x[i] - student.z_x[i];
    lat_x += d * d;
  }
  for (std::size_t i = 0; i < student.z_q.size(); ++i) {
    double d = teacher.z_q[i] - student.z_q[i];
    lat_q += d * d;
  }
  double l_p = pose_loss(position_loss(decoded_x, gt.position),
                         orientation_loss(decoded_q_raw, gt.orientation.canonicalized()), s);
  return std::sqrt(lat_x) + std::sqrt(lat_q) + l_p;
}

/// Train the PAE against a frozen teacher: match the teacher's latents and
/// keep the teacher-decoded pose close to ground truth.
inline TrainLog train_pae(const AprModel& teacher, PaeModel& model, const Dataset& data,
                          const TrainConfig& cfg) {
  if (data.samples.empty()) throw std::invalid_argument("train_pae: empty dataset");
  if (teacher.cfg.latent_dim != model.cfg.latent_dim)
    throw std::invalid_argument("train_pae: teacher/student latent width mismatch");

  // Teacher latents are fixed; compute them once.
  std::size_t n = data.samples.size();
  Tensor teach_x({n, model.cfg.latent_dim}), teach_q({n, model.cfg.latent_dim});
  {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    nn::Tape t;
    auto [zx, zq] = teacher.latents_node(t, t.constant(observation_matrix(data, all)), true);
    teach_x.data = zx->val.data;
    teach_q.data = zq->val.data;
  }

  nn::AdamState adam({cfg.learning_rate});
  auto trainable = model.params.all();
  TrainLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(n, mix_seed(cfg.seed, mix_seed(fnv1a64("pae_shuffle"), epoch)));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + std::min(start + cfg.batch_size, order.size()));
      std::vector<Pose> poses;
      std::vector<std::size_t> scene_idx;
      Tensor tx({idx.size(), model.cfg.latent_dim}), tq({idx.size(), model.cfg.latent_dim});
      for (std::size_t r = 0; r < idx.size(); ++r) {
        poses.push_back(data.samples[idx[r]].pose);
        scene_idx.push_back(data.samples[idx[r]].scene_index);
        for (std::size_t c = 0; c < model.cfg.latent_dim; ++c) {
          tx(r, c) = teach_x(idx[r], c);
          tq(r, c) = teach_q(idx[r], c);
        }
      }
      nn::Tape t;
      auto [zx, zq] = model.latents_node(t, poses, scene_idx);
      nn::Node* lat_x = nn::mean_all(t, nn::l2norm_rows(t, nn::sub(t, t.constant(std::move(tx)), zx)));
      nn::Node* lat_q = nn::mean_all(t, nn::l2norm_rows(t, nn::sub(t, t.constant(std::move(tq)), zq)));
      auto [dec_x, dec_q] = teacher.decode_node(t, zx, zq, true);
      nn::Node* l_p = pose_loss_node(t, dec_x, t.constant(position_matrix(data, idx)), dec_q,
                                     t.constant(quaternion_matrix(data, idx)),
                                     t.param(*model.s_x), t.param(*model.s_q));
      nn::Node* loss = nn::add(t, nn::add(t, lat_x, lat_q), l_p);
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
