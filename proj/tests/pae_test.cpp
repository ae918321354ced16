#include "paerpr/pae.hpp"
#include "paerpr/train.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace paerpr;
using paerpr::testsupport::random_pose;

namespace {

struct MiniWorld {
  std::vector<SceneSpec> scenes;
  Dataset train;
  Dataset heldout;
  AprConfig apr_cfg;
  PaeConfig pae_cfg;
};

MiniWorld make_world(std::uint64_t seed, std::size_t train_n = 150, std::size_t held_n = 30) {
  MiniWorld w;
  for (std::uint64_t sc = 0; sc < 2; ++sc) w.scenes.push_back(generate_scene(seed, sc, 16));
  w.train.scenes = w.scenes;
  w.heldout.scenes = w.scenes;
  for (std::size_t sc = 0; sc < 2; ++sc) {
    auto tr = sample_dataset(w.scenes[sc], train_n / 2, mix_seed(seed, 100 + sc));
    auto he = sample_dataset(w.scenes[sc], held_n / 2, mix_seed(seed, 200 + sc));
    for (auto& s : tr) s.scene_index = sc;
    for (auto& s : he) s.scene_index = sc;
    w.train.samples.insert(w.train.samples.end(), tr.begin(), tr.end());
    w.heldout.samples.insert(w.heldout.samples.end(), he.begin(), he.end());
  }
  w.apr_cfg = AprConfig{48, 32, 48, 32, 0.0, -3.0};
  w.pae_cfg.fourier.num_bands = 3;
  w.pae_cfg.latent_dim = 32;
  w.pae_cfg.hidden = 48;
  w.pae_cfg.num_layers = 3;
  return w;
}

double latent_gap(const AprModel& apr, const PaeModel& pae, const Dataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    AprOutput t = apr.forward(s.observation);
    LatentPair p = pae.encode_pose(s.pose, s.scene_index);
    double gx = 0.0, gq = 0.0;
    for (std::size_t c = 0; c < p.z_x.size(); ++c) {
      gx += (t.latents.z_x[c] - p.z_x[c]) * (t.latents.z_x[c] - p.z_x[c]);
      gq += (t.latents.z_q[c] - p.z_q[c]) * (t.latents.z_q[c] - p.z_q[c]);
    }
    total += std::sqrt(gx) + std::sqrt(gq);
  }
  return total / static_cast<double>(data.samples.size());
}

}  // namespace

TEST_CASE("fourier_encode follows the sin/cos band layout") {
  FourierSpec spec;
  spec.num_bands = 3;
  auto zero = fourier_encode({0.0, 0.0}, spec);
  REQUIRE(zero.size() == 12);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(zero[4 * k + 0] == 0.0);
    CHECK(zero[4 * k + 1] == 0.0);
    CHECK(zero[4 * k + 2] == 1.0);
    CHECK(zero[4 * k + 3] == 1.0);
  }

  FourierSpec one;
  one.num_bands = 1;
  auto half = fourier_encode({0.5}, one);
  REQUIRE(half.size() == 2);
  CHECK(half[0] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(half[1] == Catch::Approx(0.0).margin(1e-12));

  FourierSpec six;
  CHECK(six.encoded_dim(3) == 36);
  CHECK(fourier_encode({0.1, 0.2, 0.3}, six).size() == 36);
}

TEST_CASE("encode_pose produces default 256-wide latents deterministically") {
  std::vector<SceneSpec> scenes{generate_scene(1, 0, 64), generate_scene(1, 1, 64)};
  PaeModel pae = PaeModel::create(PaeConfig{}, scenes, 5);
  Pose p;
  p.position = Vec3(0.1, -0.1, 0.05);
  LatentPair a = pae.encode_pose(p, 0);
  CHECK(a.z_x.size() == 256);
  CHECK(a.z_q.size() == 256);

  LatentPair b = pae.encode_pose(p, 0);
  CHECK(a.z_x.data == b.z_x.data);
  CHECK(a.z_q.data == b.z_q.data);

  CHECK_THROWS_AS(pae.encode_pose(p, 2), std::out_of_range);

  // scene conditioning: the same pose encodes differently in another scene
  LatentPair c = pae.encode_pose(p, 1);
  bool any_differs = false;
  for (std::size_t i = 0; i < a.z_x.size(); ++i)
    if (a.z_x[i] != c.z_x[i] || a.z_q[i] != c.z_q[i]) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("latents respond smoothly to tiny position perturbations") {
  std::vector<SceneSpec> scenes{generate_scene(2, 0, 64)};
  PaeModel pae = PaeModel::create(PaeConfig{}, scenes, 9);
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    Pose p;
    for (int a = 0; a < 3; ++a)
      p.position[a] = rng.uniform(scenes[0].bounds.lo[a], scenes[0].bounds.hi[a]);
    Pose nudged = p;
    nudged.position.x() += 1e-6;
    LatentPair l0 = pae.encode_pose(p, 0), l1 = pae.encode_pose(nudged, 0);
    double delta = 0.0;
    for (std::size_t i = 0; i < l0.z_x.size(); ++i)
      delta += (l0.z_x[i] - l1.z_x[i]) * (l0.z_x[i] - l1.z_x[i]);
    CHECK(std::sqrt(delta) < 1e-3);
  }
}

TEST_CASE("pae_training_loss matches a hand-unrolled evaluation") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t dim = 8;
    LatentPair student, teacher;
    student.z_x = Tensor({dim});
    student.z_q = Tensor({dim});
    teacher.z_x = Tensor({dim});
    teacher.z_q = Tensor({dim});
    for (std::size_t i = 0; i < dim; ++i) {
      student.z_x[i] = rng.normal();
      student.z_q[i] = rng.normal();
      teacher.z_x[i] = rng.normal();
      teacher.z_q[i] = rng.normal();
    }
    Vec3 dec_x(rng.normal(), rng.normal(), rng.normal());
    Vec4 dec_q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    Pose gt = random_pose(rng);
    UncertaintyParams s{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

    // straight-line arithmetic, no library calls
    double ax = 0.0, aq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      ax += (teacher.z_x[i] - student.z_x[i]) * (teacher.z_x[i] - student.z_x[i]);
      aq += (teacher.z_q[i] - student.z_q[i]) * (teacher.z_q[i] - student.z_q[i]);
    }
    Quat g = gt.orientation.canonicalized();
    double gq[4] = {g.w, g.x, g.y, g.z};
    double qn = std::sqrt(dec_q[0] * dec_q[0] + dec_q[1] * dec_q[1] + dec_q[2] * dec_q[2] +
                          dec_q[3] * dec_q[3]);
    double lq = 0.0;
    for (int i = 0; i < 4; ++i) lq += (gq[i] - dec_q[i] / qn) * (gq[i] - dec_q[i] / qn);
    lq = std::sqrt(lq);
    double lx = std::sqrt((gt.position.x() - dec_x.x()) * (gt.position.x() - dec_x.x()) +
                          (gt.position.y() - dec_x.y()) * (gt.position.y() - dec_x.y()) +
                          (gt.position.z() - dec_x.z()) * (gt.position.z() - dec_x.z()));
    double expected = std::sqrt(ax) + std::sqrt(aq) + lx * std::exp(-s.s_x) + s.s_x +
                      lq * std::exp(-s.s_q) + s.s_q;

    double got = pae_training_loss(student, teacher, dec_x, dec_q, gt, s);
    CHECK(got == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("pae loss reduces to the pose term when latents agree") {
  Rng rng(37);
  LatentPair lat;
  lat.z_x = Tensor({6});
  lat.z_q = Tensor({6});
  for (std::size_t i = 0; i < 6; ++i) {
    lat.z_x[i] = rng.normal();
    lat.z_q[i] = rng.normal();
  }
  Pose gt = random_pose(rng);
  Quat g = gt.orientation.canonicalized();

  // decoded == ground truth and s == 0 -> zero loss
  UncertaintyParams zero{0.0, 0.0};
  CHECK(pae_training_loss(lat, lat, gt.position, g.vec(), gt, zero) ==
        Catch::Approx(0.0).margin(1e-12));

  // identical latents, wrong pose -> exactly the pose loss
  Vec3 dx = gt.position + Vec3(0.3, 0, 0);
  UncertaintyParams s{0.4, -0.2};
  double expected = pose_loss(position_loss(dx, gt.position), orientation_loss(g.vec(), g), s);
  CHECK(pae_training_loss(lat, lat, dx, g.vec(), gt, s) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("the training graph computes the same loss as the plain formula") {
  MiniWorld w = make_world(61);
  AprModel apr = AprModel::create(w.apr_cfg, 1);
  PaeModel pae = PaeModel::create(w.pae_cfg, w.scenes, 2);
  const Sample& s = w.train.samples[3];

  AprOutput teacher_out = apr.forward(s.observation);
  LatentPair student = pae.encode_pose(s.pose, s.scene_index);
  auto [dec_x, dec_q] = apr.decode_raw(student);
  double plain = pae_training_loss(student, teacher_out.latents, dec_x, dec_q, s.pose,
                                   pae.uncertainty());

  nn::Tape t;
  auto [zx, zq] = pae.latents_node(t, {s.pose}, {s.scene_index}, true);
  nn::Node* lat_x = nn::mean_all(
      t, nn::l2norm_rows(t, nn::sub(t, t.constant(Tensor({1, 32}, teacher_out.latents.z_x.data)), zx)));
  nn::Node* lat_q = nn::mean_all(
      t, nn::l2norm_rows(t, nn::sub(t, t.constant(Tensor({1, 32}, teacher_out.latents.z_q.data)), zq)));
  auto [dx, dq] = apr.decode_node(t, zx, zq, true);
  Quat g = s.pose.orientation.canonicalized();
  nn::Node* lp = pose_loss_node(
      t, dx, t.constant(Tensor({1, 3}, {s.pose.position.x(), s.pose.position.y(), s.pose.position.z()})),
      dq, t.constant(Tensor({1, 4}, {g.w, g.x, g.y, g.z})), t.frozen(*pae.s_x), t.frozen(*pae.s_q));
  nn::Node* graph_loss = nn::add(t, nn::add(t, lat_x, lat_q), lp);

  CHECK(graph_loss->val[0] == Catch::Approx(plain).margin(1e-12));
}

TEST_CASE("train_pae closes the latent gap and never touches the teacher") {
  MiniWorld w = make_world(71);
  AprModel apr = AprModel::create(w.apr_cfg, 11);
  TrainConfig apr_tc{3, 8, 1e-3, 21};
  train_apr(apr, w.train, apr_tc);

  std::vector<Tensor> teacher_before;
  for (auto& p : apr.params.storage) teacher_before.push_back(p.value);

  PaeModel pae = PaeModel::create(w.pae_cfg, w.scenes, 31);
  double gap_before = latent_gap(apr, pae, w.heldout);

  TrainConfig tc{4, 8, 1e-3, 41};
  CHECK_THROWS_AS(train_pae(apr, pae, Dataset{}, tc), std::invalid_argument);
  TrainLog log = train_pae(apr, pae, w.train, tc);

  CHECK(log.final_loss() < log.initial());
  double gap_after = latent_gap(apr, pae, w.heldout);
  CHECK(gap_after < gap_before);

  std::size_t i = 0;
  for (auto& p : apr.params.storage) {
    CHECK(p.value.data == teacher_before[i].data);  // bitwise
    ++i;
  }
}
