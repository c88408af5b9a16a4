#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "keyloco/keyframes/keyframes.hpp"
#include "keyloco/sim/dataset.hpp"
#include "keyloco/util/rng.hpp"

#include <cmath>
#include <vector>

using namespace keyloco;
using namespace keyloco::keyframes;
using keyloco::sim::EnvState;

namespace {

constexpr double kDt = 0.02;
constexpr int kNj = 4;

EnvState make_state(double px, double py, double yaw, int t_step = 0) {
  EnvState s;
  s.px = px;
  s.py = py;
  s.yaw = yaw;
  s.theta.assign(kNj, 0.0);
  s.theta_dot.assign(kNj, 0.0);
  s.a_prev.assign(3 + kNj, 0.0);
  s.t_step = t_step;
  s.clock = t_step * kDt;
  return s;
}

Keyframe pos_yaw_kf(int t_step, double px, double py, double yaw) {
  Keyframe kf;
  kf.t_step = t_step;
  kf.has_position = true;
  kf.px = px;
  kf.py = py;
  kf.has_yaw = true;
  kf.yaw = yaw;
  return kf;
}

}  // namespace

TEST_CASE("goal error in the body frame") {
  SUBCASE("zero error at the target") {
    EnvState s = make_state(0.4, -0.2, 1.1, 10);
    Keyframe kf = pos_yaw_kf(10, 0.4, -0.2, 1.1);
    GoalError e = goal_error(s, kf, kDt, kNj);
    CHECK(e.dpx == 0.0);
    CHECK(e.dpy == 0.0);
    CHECK(e.dyaw == 0.0);
    CHECK(e.time_to_goal == 0.0);
  }
  SUBCASE("rotation into the body frame") {
    // facing +y, target one meter ahead in +x: to the robot's right
    EnvState s = make_state(0, 0, kPi / 2);
    Keyframe kf = pos_yaw_kf(50, 1.0, 0.0, kPi / 2);
    GoalError e = goal_error(s, kf, kDt, kNj);
    CHECK(e.dpx == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(e.dpy == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(e.time_to_goal == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("yaw error wraps across the seam") {
    EnvState s = make_state(0, 0, kPi - 0.05);
    Keyframe kf = pos_yaw_kf(50, 0, 0, -kPi + 0.05);
    GoalError e = goal_error(s, kf, kDt, kNj);
    CHECK(e.dyaw == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("negative time after the target passes") {
    EnvState s = make_state(0, 0, 0, 80);
    Keyframe kf = pos_yaw_kf(50, 1, 1, 0);
    GoalError e = goal_error(s, kf, kDt, kNj);
    CHECK(e.time_to_goal == doctest::Approx(-0.6).epsilon(1e-12));
  }
  SUBCASE("posture error and rmse") {
    EnvState s = make_state(0, 0, 0);
    s.theta = {0.1, -0.2, 0.3, 0.0};
    Keyframe kf;
    kf.t_step = 25;
    kf.has_posture = true;
    kf.theta = {0.2, -0.2, 0.0, 0.4};
    GoalError e = goal_error(s, kf, kDt, kNj);
    CHECK(e.dtheta[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(e.dtheta[2] == doctest::Approx(-0.3).epsilon(1e-12));
    // rmse of (0.1, 0, -0.3, 0.4) = sqrt(0.26/4)
    CHECK(e.posture_rmse() == doctest::Approx(std::sqrt(0.26 / 4)).epsilon(1e-12));
  }
}

TEST_CASE("goal error is invariant to rigid world transforms") {
  Rng rng(555);
  for (int trial = 0; trial < 200; ++trial) {
    EnvState s = make_state(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi),
                            rng.uniform_int(0, 100));
    Keyframe kf = pos_yaw_kf(s.t_step + rng.uniform_int(1, 100), rng.uniform(-5, 5),
                             rng.uniform(-5, 5), rng.uniform(-kPi, kPi));
    GoalError e0 = goal_error(s, kf, kDt, kNj);

    // translate and rotate both the robot and the goal by the same transform
    double tx = rng.uniform(-10, 10), ty = rng.uniform(-10, 10), a = rng.uniform(-kPi, kPi);
    auto xform = [&](double x, double y, double yaw, double& ox, double& oy, double& oyaw) {
      rotate2(a, x, y, ox, oy);
      ox += tx;
      oy += ty;
      oyaw = wrap_pi(yaw + a);
    };
    EnvState s2 = s;
    xform(s.px, s.py, s.yaw, s2.px, s2.py, s2.yaw);
    Keyframe kf2 = kf;
    xform(kf.px, kf.py, kf.yaw, kf2.px, kf2.py, kf2.yaw);
    GoalError e1 = goal_error(s2, kf2, kDt, kNj);

    CHECK(e1.dpx == doctest::Approx(e0.dpx).epsilon(1e-10));
    CHECK(e1.dpy == doctest::Approx(e0.dpy).epsilon(1e-10));
    CHECK(std::abs(wrap_pi(e1.dyaw - e0.dyaw)) < 1e-12);
  }
}

TEST_CASE("token sequence layout and masking") {
  TokenConfig cfg;
  cfg.max_keyframes = 4;
  const int D = cfg.token_dim(kNj);
  REQUIRE(D == 29);
  REQUIRE(cfg.rows() == 5);

  EnvState s = make_state(0, 0, 0, 100);
  s.vx = 0.5;
  s.omega = -0.3;
  s.theta[1] = 0.7;
  s.a_prev[0] = 0.25;

  KeyframeSet kfs;
  kfs.frames.push_back(pos_yaw_kf(120, 1, 0, 0.2));
  kfs.frames.push_back(pos_yaw_kf(160, 2, 1, 0.4));

  SUBCASE("self-goal row carries state, zero goal fields, no mask") {
    TokenSequence seq = build_tokens(s, kfs, cfg, kDt, kNj);
    CHECK(seq.masked[0] == 0);
    CHECK(seq.tokens.at(0, 0) == 0.5);    // vx
    CHECK(seq.tokens.at(0, 2) == -0.3);   // omega
    CHECK(seq.tokens.at(0, 4) == 0.7);    // theta[1]
    CHECK(seq.tokens.at(0, 11) == 0.25);  // a_prev[0]
    for (int c = cfg.state_dim(kNj); c < D; ++c) CHECK(seq.tokens.at(0, c) == 0.0);
  }
  SUBCASE("goal rows carry errors, presence bits and scaled time") {
    TokenSequence seq = build_tokens(s, kfs, cfg, kDt, kNj);
    const int g = cfg.state_dim(kNj);
    CHECK(seq.masked[1] == 0);
    CHECK(seq.tokens.at(1, g + 0) == doctest::Approx(1.0).epsilon(1e-12));   // dp x, yaw = 0
    CHECK(seq.tokens.at(1, g + 2) == doctest::Approx(0.2).epsilon(1e-12));   // dyaw
    CHECK(seq.tokens.at(1, g + 7) == 1.0);                                    // position bit
    CHECK(seq.tokens.at(1, g + 8) == 1.0);                                    // yaw bit
    CHECK(seq.tokens.at(1, g + 9) == 0.0);                                    // posture bit
    CHECK(seq.tokens.at(1, g + 10) == doctest::Approx(0.4 / 2.0).epsilon(1e-12));  // tt/2
    CHECK(seq.tokens.at(2, g + 10) == doctest::Approx(1.2 / 2.0).epsilon(1e-12));
    // every row repeats the robot state
    for (int r = 1; r < cfg.rows(); ++r)
      for (int c = 0; c < cfg.state_dim(kNj); ++c)
        CHECK(seq.tokens.at(r, c) == seq.tokens.at(0, c));
  }
  SUBCASE("slots past n_k are masked") {
    TokenSequence seq = build_tokens(s, kfs, cfg, kDt, kNj);
    CHECK(seq.masked[1] == 0);
    CHECK(seq.masked[2] == 0);
    CHECK(seq.masked[3] == 1);
    CHECK(seq.masked[4] == 1);
  }
  SUBCASE("n_k = 0 leaves only the self-goal token") {
    KeyframeSet empty;
    TokenSequence seq = build_tokens(s, empty, cfg, kDt, kNj);
    CHECK(seq.masked[0] == 0);
    for (int r = 1; r < cfg.rows(); ++r) CHECK(seq.masked[r] == 1);
  }
  SUBCASE("keyframes drop out strictly past the horizon") {
    // goal at step 120, horizon 1 s = 50 steps
    EnvState at_boundary = make_state(0, 0, 0, 170);
    TokenSequence seq = build_tokens(at_boundary, kfs, cfg, kDt, kNj);
    CHECK(seq.masked[1] == 0);  // exactly t_hat + 1.0 s stays visible
    EnvState past = make_state(0, 0, 0, 171);
    seq = build_tokens(past, kfs, cfg, kDt, kNj);
    CHECK(seq.masked[1] == 1);  // 1.02 s past: gone
    CHECK(seq.masked[2] == 0);
  }
  SUBCASE("too many keyframes for the capacity throws") {
    KeyframeSet big;
    for (int i = 0; i < 5; ++i) big.frames.push_back(pos_yaw_kf(50 + 10 * i, 0, 0, 0));
    CHECK_THROWS(build_tokens(s, big, cfg, kDt, kNj));
  }
}

TEST_CASE("next-goal-only visibility masks everything but the earliest future keyframe") {
  TokenConfig cfg;
  EnvState s = make_state(0, 0, 0, 130);
  KeyframeSet kfs;
  kfs.frames.push_back(pos_yaw_kf(120, 1, 0, 0));  // passed, still within horizon
  kfs.frames.push_back(pos_yaw_kf(160, 2, 0, 0));  // next
  kfs.frames.push_back(pos_yaw_kf(200, 3, 0, 0));  // future, hidden in this mode

  TokenSequence all = build_tokens(s, kfs, cfg, kDt, kNj, GoalVisibility::all_goals);
  CHECK(all.masked[1] == 0);
  CHECK(all.masked[2] == 0);
  CHECK(all.masked[3] == 0);

  TokenSequence next = build_tokens(s, kfs, cfg, kDt, kNj, GoalVisibility::next_goal_only);
  CHECK(next.masked[0] == 0);
  CHECK(next.masked[1] == 1);
  CHECK(next.masked[2] == 0);
  CHECK(next.masked[3] == 1);

  // all keyframes passed: only the self-goal token remains
  EnvState late = make_state(0, 0, 0, 210);
  TokenSequence none = build_tokens(late, kfs, cfg, kDt, kNj, GoalVisibility::next_goal_only);
  CHECK(none.masked[0] == 0);
  for (int r = 1; r < cfg.rows(); ++r) CHECK(none.masked[r] == 1);
}

TEST_CASE("keyframe sets reject non-increasing times") {
  KeyframeSet kfs;
  kfs.frames.push_back(pos_yaw_kf(50, 0, 0, 0));
  kfs.frames.push_back(pos_yaw_kf(50, 1, 0, 0));
  CHECK_THROWS(kfs.validate());
  kfs.frames[1].t_step = 49;
  CHECK_THROWS(kfs.validate());
  kfs.frames[1].t_step = 51;
  CHECK_NOTHROW(kfs.validate());
}

TEST_CASE("random keyframe sampling respects the configured ranges") {
  SampleRanges r;
  GoalComponents comps;
  Rng rng(808);
  EnvState s0 = make_state(0.3, -0.8, 0.6, 7);

  // chi-squared uniformity of the interval draw over {25..50}
  const int n_samples = 10000;
  std::vector<int> bins(r.interval_hi - r.interval_lo + 1, 0);
  int produced = 0;
  while (produced < n_samples) {
    KeyframeSet set = sample_random_keyframes(r, 4, s0, comps, nullptr, kNj, rng);
    REQUIRE(set.frames.size() == 4);
    int prev_t = s0.t_step;
    double prev_x = s0.px, prev_y = s0.py, prev_yaw = s0.yaw;
    for (const Keyframe& kf : set.frames) {
      int gap = kf.t_step - prev_t;
      REQUIRE(gap >= r.interval_lo);
      REQUIRE(gap <= r.interval_hi);
      if (produced < n_samples) {
        ++bins[gap - r.interval_lo];
        ++produced;
      }
      double dist = std::hypot(kf.px - prev_x, kf.py - prev_y);
      CHECK(dist >= r.radius_lo - 1e-12);
      CHECK(dist <= r.radius_hi + 1e-12);
      // direction relative to previous yaw within +-pi/3
      double dir = wrap_pi(std::atan2(kf.py - prev_y, kf.px - prev_x) - prev_yaw);
      CHECK(std::abs(dir) <= kPi / 3 + 1e-12);
      CHECK(std::abs(wrap_pi(kf.yaw - prev_yaw)) <= kPi / 3 + 1e-12);
      prev_t = kf.t_step;
      prev_x = kf.px;
      prev_y = kf.py;
      prev_yaw = kf.yaw;
    }
  }
  const double expected = static_cast<double>(n_samples) / bins.size();
  double chi2 = 0;
  for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
  // chi-squared critical value, 25 dof, alpha = 0.01
  CHECK(chi2 < 44.314);
}

TEST_CASE("random keyframe sampling is reproducible and can attach postures") {
  SampleRanges r;
  GoalComponents comps;
  comps.posture = true;
  sim::DatasetGenConfig dcfg;
  dcfg.num_clips = 3;
  sim::ReferenceDataset ds = sim::generate_dataset(dcfg, 11);
  EnvState s0 = make_state(0, 0, 0);

  Rng r1(99), r2(99);
  KeyframeSet a = sample_random_keyframes(r, 3, s0, comps, &ds, kNj, r1);
  KeyframeSet b = sample_random_keyframes(r, 3, s0, comps, &ds, kNj, r2);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].t_step == b.frames[i].t_step);
    CHECK(a.frames[i].px == b.frames[i].px);
    CHECK(a.frames[i].yaw == b.frames[i].yaw);
    REQUIRE(a.frames[i].has_posture);
    REQUIRE(a.frames[i].theta.size() == kNj);
    for (int j = 0; j < kNj; ++j) CHECK(a.frames[i].theta[j] == b.frames[i].theta[j]);
  }
  CHECK_THROWS(sample_random_keyframes(r, 2, s0, comps, nullptr, kNj, r1));
}

TEST_CASE("dataset keyframes ride the clip when the robot starts on it") {
  sim::DatasetGenConfig dcfg;
  dcfg.num_clips = 1;
  dcfg.duration_lo = dcfg.duration_hi = 10.0;
  dcfg.zero_speed_fraction = 0.0;
  sim::ReferenceDataset ds = sim::generate_dataset(dcfg, 21);
  const sim::Clip& clip = ds.clips[0];

  SampleRanges r;
  GoalComponents comps;
  comps.posture = true;
  for (uint64_t seed = 5; seed < 15; ++seed) {
    // replay the sampler's draws to learn which segment it will pick
    Rng probe(seed);
    int total = 0;
    std::vector<int> offs(3);
    for (int i = 0; i < 3; ++i) {
      total += probe.uniform_int(r.interval_lo, r.interval_hi);
      offs[i] = total;
    }
    probe.uniform_int(0, 0);  // clip choice, single clip
    const int start = probe.uniform_int(0, clip.frames - 1 - total);

    // robot exactly at the segment's start pose: targets must be clip poses
    EnvState s0 = make_state(clip.at(start, sim::Clip::kX), clip.at(start, sim::Clip::kY),
                             wrap_pi(clip.at(start, sim::Clip::kYaw)));
    Rng rng(seed);
    KeyframeSet set = sample_dataset_keyframes(r, 3, s0, comps, ds, kNj, rng);
    REQUIRE(set.frames.size() == 3);
    for (int i = 0; i < 3; ++i) {
      const Keyframe& kf = set.frames[i];
      const int f = start + offs[i];
      CHECK(kf.t_step == offs[i]);
      CHECK(kf.px == doctest::Approx(clip.at(f, sim::Clip::kX)).epsilon(1e-10));
      CHECK(kf.py == doctest::Approx(clip.at(f, sim::Clip::kY)).epsilon(1e-10));
      CHECK(std::abs(wrap_pi(kf.yaw - clip.at(f, sim::Clip::kYaw))) < 1e-10);
      for (int j = 0; j < kNj; ++j)
        CHECK(kf.theta[j] == clip.at(f, sim::Clip::kTheta0 + j));
    }
  }
}

TEST_CASE("dataset keyframes transform rigidly with the robot start pose") {
  sim::DatasetGenConfig dcfg;
  dcfg.num_clips = 2;
  dcfg.zero_speed_fraction = 0.0;
  sim::ReferenceDataset ds = sim::generate_dataset(dcfg, 33);
  SampleRanges r;
  GoalComponents comps;

  // two different robot poses, identical sampler stream: the keyframe sets
  // must differ by exactly the rigid transform between the poses
  EnvState sA = make_state(0, 0, 0);
  EnvState sB = make_state(2.0, -1.0, 0.9);
  Rng rA(71), rB(71);
  KeyframeSet a = sample_dataset_keyframes(r, 4, sA, comps, ds, kNj, rA);
  KeyframeSet b = sample_dataset_keyframes(r, 4, sB, comps, ds, kNj, rB);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    double ex, ey;
    rotate2(0.9, a.frames[i].px, a.frames[i].py, ex, ey);
    CHECK(b.frames[i].px == doctest::Approx(ex + 2.0).epsilon(1e-10));
    CHECK(b.frames[i].py == doctest::Approx(ey - 1.0).epsilon(1e-10));
    CHECK(std::abs(wrap_pi(b.frames[i].yaw - wrap_pi(a.frames[i].yaw + 0.9))) < 1e-10);
    CHECK(a.frames[i].t_step == b.frames[i].t_step);
  }

  // a dataset with only short clips cannot satisfy the horizon
  sim::ReferenceDataset tiny;
  tiny.nj = kNj;
  tiny.clips.push_back(sim::Clip{});
  tiny.clips[0].nj = kNj;
  tiny.clips[0].frames = 10;
  tiny.clips[0].data.assign(10 * tiny.clips[0].cols(), 0.0);
  Rng rng(1);
  CHECK_THROWS(sample_dataset_keyframes(r, 4, sA, comps, tiny, kNj, rng));
}

TEST_CASE("curriculum mix ramps linearly then saturates") {
  CHECK(curriculum_mix(0.0) == 0.0);
  CHECK(curriculum_mix(-0.1) == 0.0);
  CHECK(curriculum_mix(0.25) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(curriculum_mix(0.5) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(curriculum_mix(0.75) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(curriculum_mix(1.0) == doctest::Approx(0.8).epsilon(1e-12));
  double prev = -1;
  for (int i = 0; i <= 100; ++i) {
    double p = curriculum_mix(i / 100.0);
    CHECK(p >= prev);
    prev = p;
  }
  CHECK(curriculum_mix(0.25, 0.4) == doctest::Approx(0.2).epsilon(1e-12));
}
