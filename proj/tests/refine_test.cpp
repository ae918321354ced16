#include "paerpr/refine.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <memory>

using namespace paerpr;
using paerpr::testsupport::quat_distance;
using paerpr::testsupport::random_pose;

namespace {

struct RefineStack {
  std::vector<SceneSpec> scenes;
  Dataset train;
  AprModel apr;
  std::shared_ptr<PaeModel> pae;
  TransformerRprModel rpr;

  explicit RefineStack(std::uint64_t seed)
      : scenes{generate_scene(seed, 0, 16)},
        apr(AprModel::create(AprConfig{48, 32, 48, 32, 0.0, -3.0}, mix_seed(seed, 1))) {
    train.scenes = scenes;
    train.samples = sample_dataset(scenes[0], 60, mix_seed(seed, 2));
    PaeConfig pc;
    pc.fourier.num_bands = 3;
    pc.latent_dim = 32;
    pc.hidden = 48;
    pc.num_layers = 3;
    pae = std::make_shared<PaeModel>(PaeModel::create(pc, scenes, mix_seed(seed, 3)));
    rpr = TransformerRprModel::create(RprConfig{48, 32, 48, 32, 0.0, -3.0},
                                      nn::TransformerConfig{2, 4, 32, 64, 0.1}, pae,
                                      mix_seed(seed, 4));
  }
};

}  // namespace

TEST_CASE("nearest_pose matches a brute-force scan") {
  Rng rng(401);
  std::vector<Pose> db;
  for (int i = 0; i < 1000; ++i) db.push_back(random_pose(rng));

  CHECK_THROWS_AS(nearest_pose({}, db[0]), std::invalid_argument);

  // query already in the database finds itself
  CHECK(nearest_pose_index(db, db[123]) == 123);

  Pose near_origin, far_away;
  near_origin.position = Vec3(1, 0, 0);
  far_away.position = Vec3(2, 0, 0);
  Pose origin;
  CHECK(nearest_pose({near_origin, far_away}, origin).position == near_origin.position);

  for (int trial = 0; trial < 50; ++trial) {
    Pose q = random_pose(rng);
    std::size_t got = nearest_pose_index(db, q);
    std::size_t best = 0;
    double best_d = (db[0].position - q.position).norm();
    for (std::size_t i = 1; i < db.size(); ++i) {
      double d = (db[i].position - q.position).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    CHECK(got == best);
  }

  // exact ties resolve to the lowest index
  std::vector<Pose> tie(3);
  tie[0].position = Vec3(1, 0, 0);
  tie[1].position = Vec3(-1, 0, 0);
  tie[2].position = Vec3(1, 0, 0);
  CHECK(nearest_pose_index(tie, origin) == 0);
}

TEST_CASE("a perfect delta closes the refinement loop in one step") {
  Rng rng(402);
  for (int trial = 0; trial < 100; ++trial) {
    Pose estimate = random_pose(rng), truth = random_pose(rng);
    RelativePose perfect = relative_pose(estimate, truth);
    Pose refined = apply_relative(estimate, perfect);
    CHECK((refined.position - truth.position).norm() < 1e-12);
    CHECK(quat_distance(refined.orientation.canonicalized(), truth.orientation.canonicalized()) < 1e-12);
  }
}

TEST_CASE("refine_pose composes APR, RPR and apply_relative") {
  RefineStack st(403);
  const Sample& s = st.train.samples[0];

  RefineConfig cfg;
  auto [refined, trace] = refine_pose(st.apr, st.rpr, s.observation, 0, cfg);

  // manual composition matches exactly
  Pose p0 = st.apr.forward(s.observation).pose;
  RelativePose d = st.rpr.forward(s.observation, p0, 0);
  Pose manual = apply_relative(p0, d);
  CHECK(refined.position == manual.position);
  CHECK(refined.orientation.canonicalized().vec() == manual.orientation.canonicalized().vec());

  REQUIRE(trace.poses.size() == 2);
  REQUIRE(trace.deltas.size() == 1);
  REQUIRE(trace.references.size() == 1);
  CHECK(trace.poses[0].position == p0.position);
}

TEST_CASE("the trace re-verifies the anchoring invariant") {
  RefineStack st(404);
  const Sample& s = st.train.samples[1];
  RefineConfig cfg;
  cfg.iterations = 3;
  auto [refined, trace] = refine_pose(st.apr, st.rpr, s.observation, 0, cfg);
  REQUIRE(trace.poses.size() == 4);
  REQUIRE(trace.deltas.size() == 3);
  for (std::size_t t = 0; t < trace.deltas.size(); ++t) {
    Pose expect = apply_relative(trace.references[t], trace.deltas[t]);
    CHECK((expect.position - trace.poses[t + 1].position).norm() == 0.0);
    CHECK(quat_distance(expect.orientation.canonicalized(), trace.poses[t + 1].orientation) == 0.0);
    if (t > 0) CHECK(trace.references[t].position == trace.poses[t].position);
  }
  CHECK(refined.position == trace.poses.back().position);
}

TEST_CASE("refinement is deterministic") {
  RefineStack st(405);
  const Sample& s = st.train.samples[2];
  RefineConfig cfg;
  cfg.iterations = 2;
  auto [a, ta] = refine_pose(st.apr, st.rpr, s.observation, 0, cfg);
  auto [b, tb] = refine_pose(st.apr, st.rpr, s.observation, 0, cfg);
  CHECK(a.position == b.position);
  CHECK(a.orientation.vec() == b.orientation.vec());
  for (std::size_t i = 0; i < ta.poses.size(); ++i)
    CHECK(ta.poses[i].position == tb.poses[i].position);
}

TEST_CASE("nearest-pose reference is used in the first iteration only") {
  RefineStack st(406);
  const Sample& s = st.train.samples[3];
  std::vector<Pose> db;
  for (const auto& smp : st.train.samples) db.push_back(smp.pose);

  RefineConfig cfg;
  cfg.iterations = 2;
  cfg.reference = ReferenceSource::nearest_training_pose;
  cfg.pose_database = &db;
  auto [refined, trace] = refine_pose(st.apr, st.rpr, s.observation, 0, cfg);

  Pose p0 = st.apr.forward(s.observation).pose;
  Pose nearest = nearest_pose(db, p0);
  CHECK(trace.references[0].position == nearest.position);
  CHECK(trace.references[1].position == trace.poses[1].position);

  RefineConfig missing_db;
  missing_db.reference = ReferenceSource::nearest_training_pose;
  CHECK_THROWS_AS(refine_pose(st.apr, st.rpr, s.observation, 0, missing_db), std::invalid_argument);
  CHECK_THROWS_AS(refine_pose(st.apr, st.rpr, s.observation, 9, cfg), std::out_of_range);
}

TEST_CASE("refine_batch agrees with per-query refinement") {
  RefineStack st(407);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  RefineConfig cfg;
  cfg.iterations = 2;
  auto batch = refine_batch(st.apr, st.rpr, st.train, idx, cfg);
  REQUIRE(batch.size() == idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto [single, trace] = refine_pose(st.apr, st.rpr, st.train.samples[idx[r]].observation, 0, cfg);
    CHECK((batch[r].position - single.position).norm() < 1e-9);
    CHECK(quat_distance(batch[r].orientation, single.orientation) < 1e-9);
  }
}

TEST_CASE("damping scales the refinement motion") {
  RelativePose d;
  d.dx = Vec3(1.0, -2.0, 0.5);
  d.dq = Quat::from_axis_angle(Vec3(0, 0, 1), 0.8);
  RelativePose half = damp_delta(d, 0.5);
  CHECK(half.dx.isApprox(Vec3(0.5, -1.0, 0.25), 1e-12));
  double angle = 2.0 * std::acos(std::clamp(half.dq.canonicalized().w, -1.0, 1.0));
  CHECK(angle == Catch::Approx(0.4).epsilon(1e-9));

  RelativePose same = damp_delta(d, 1.0);
  CHECK(same.dx == d.dx);
  CHECK(same.dq.vec() == d.dq.vec());
}
