#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "keyloco/sim/dataset.hpp"
#include "keyloco/sim/dataset_io.hpp"
#include "keyloco/sim/env.hpp"
#include "keyloco/util/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

using namespace keyloco;
using namespace keyloco::sim;

namespace {

// Scalar re-derivation of the update equations, written independently of
// PlanarEnv so the two implementations can cross-check each other.
struct RefModel {
  EnvConfig c;
  double px = 0, py = 0, yaw = 0, vx = 0, vy = 0, om = 0;
  std::vector<double> th, thd;

  explicit RefModel(const EnvConfig& cfg) : c(cfg), th(cfg.nj, 0.0), thd(cfg.nj, 0.0) {}

  void step(const std::vector<double>& u_raw) {
    auto clip01 = [](double v) { return v < -1 ? -1.0 : (v > 1 ? 1.0 : v); };
    double ax = clip01(u_raw[0]) * c.a_max, ay = clip01(u_raw[1]) * c.a_max;
    double aw = clip01(u_raw[2]) * c.alpha_max;
    vx = vx + c.dt * (ax - c.c_v * vx);
    vy = vy + c.dt * (ay - c.c_v * vy);
    px += c.dt * (std::cos(yaw) * vx - std::sin(yaw) * vy);
    py += c.dt * (std::sin(yaw) * vx + std::cos(yaw) * vy);
    om = om + c.dt * (aw - c.c_w * om);
    yaw = wrap_pi(yaw + c.dt * om);
    for (int j = 0; j < c.nj; ++j) {
      double tgt = clip01(u_raw[3 + j]) * c.joint_target_scale;
      double acc = c.kp * (tgt - th[j]) - c.kd * thd[j];
      if (acc > c.theta_ddot_max) acc = c.theta_ddot_max;
      if (acc < -c.theta_ddot_max) acc = -c.theta_ddot_max;
      thd[j] += c.dt * acc;
      th[j] += c.dt * thd[j];
    }
  }
};

std::string temp_path(const char* name) {
  return std::string("/tmp/keyloco_test_") + name;
}

}  // namespace

TEST_CASE("undamped constant acceleration matches the closed form") {
  EnvConfig cfg;
  cfg.c_v = 0.0;
  PlanarEnv env(cfg, 1, 0);
  env.reset_default();
  std::vector<double> u(cfg.action_dim(), 0.0);
  u[0] = 1.0 / cfg.a_max;  // 1 m/s^2 forward
  for (int k = 0; k < 50; ++k) env.step(u);
  // semi-implicit Euler: p_K = dt^2 * a * K(K+1)/2
  CHECK(env.state().px == doctest::Approx(0.51).epsilon(1e-9));
  CHECK(env.state().py == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(env.state().vx == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(env.state().t_step == 50);
  CHECK(env.state().clock == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("frozen three-step traces") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 1, 0);
  env.reset_default();
  std::vector<double> u(cfg.action_dim(), 0.0);
  u[0] = 0.5;  // 8 m/s^2, damped
  u[3] = 1.0;  // joint target 1.2 rad
  for (int k = 0; k < 3; ++k) env.step(u);
  CHECK(env.state().vx == doctest::Approx(0.47236096).epsilon(1e-12));
  CHECK(env.state().px == doctest::Approx(0.0189960192).epsilon(1e-12));
  // PD trace: theta after 2 steps = 0.0565248
  PlanarEnv env2(cfg, 1, 0);
  env2.reset_default();
  std::vector<double> u2(cfg.action_dim(), 0.0);
  u2[3] = 1.0;
  env2.step(u2);
  CHECK(env2.state().theta_dot[0] == doctest::Approx(0.96).epsilon(1e-12));
  CHECK(env2.state().theta[0] == doctest::Approx(0.0192).epsilon(1e-12));
  env2.step(u2);
  CHECK(env2.state().theta[0] == doctest::Approx(0.0565248).epsilon(1e-12));
}

TEST_CASE("zero action at rest leaves everything but the clock") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 3, 0);
  env.reset_default();
  std::vector<double> u(cfg.action_dim(), 0.0);
  for (int k = 0; k < 10; ++k) env.step(u);
  const EnvState& s = env.state();
  CHECK(s.px == 0.0);
  CHECK(s.py == 0.0);
  CHECK(s.yaw == 0.0);
  CHECK(s.vx == 0.0);
  CHECK(s.vy == 0.0);
  CHECK(s.omega == 0.0);
  for (double v : s.theta) CHECK(v == 0.0);
  CHECK(s.t_step == 10);
  CHECK(s.clock == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("damping never increases speed under zero action") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 5, 0);
  env.reset_default();
  EnvState s0 = env.state();
  s0.vx = 1.0;
  s0.vy = 0.5;
  s0.omega = 2.0;
  env.set_state(s0);
  std::vector<double> u(cfg.action_dim(), 0.0);
  double prev = std::hypot(1.0, 0.5);
  double prev_om = 2.0;
  for (int k = 0; k < 600; ++k) {
    env.step(u);
    double sp = std::hypot(env.state().vx, env.state().vy);
    CHECK(sp <= prev + 1e-15);
    CHECK(std::abs(env.state().omega) <= prev_om + 1e-15);
    prev = sp;
    prev_om = std::abs(env.state().omega);
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("yaw stays wrapped under sustained turning") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 7, 0);
  env.reset_default();
  std::vector<double> u(cfg.action_dim(), 0.0);
  u[2] = 1.0;
  for (int k = 0; k < 500; ++k) {
    env.step(u);
    CHECK(env.state().yaw > -kPi - 1e-15);
    CHECK(env.state().yaw <= kPi + 1e-15);
  }
}

TEST_CASE("joint acceleration clamp engages") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 9, 0);
  env.reset_default();
  EnvState s = env.state();
  s.theta[0] = -1.0;
  s.theta_dot[0] = -100.0;
  env.set_state(s);
  std::vector<double> u(cfg.action_dim(), 0.0);
  u[3] = 1.0;  // raw PD acc = 40*2.2 + 200 = 288, clamped to 250
  env.step(u);
  CHECK(env.state().theta_dot[0] == doctest::Approx(-95.0).epsilon(1e-12));
}

TEST_CASE("env agrees with an independent scalar model over random actions") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 11, 0);
  env.reset_default();
  RefModel ref(cfg);
  Rng rng(2024);
  std::vector<double> u(cfg.action_dim());
  for (int k = 0; k < 300; ++k) {
    for (auto& v : u) v = rng.uniform(-1.5, 1.5);  // exercises the clamps too
    env.step(u);
    ref.step(u);
    CHECK(env.state().px == doctest::Approx(ref.px).epsilon(1e-12));
    CHECK(env.state().py == doctest::Approx(ref.py).epsilon(1e-12));
    CHECK(env.state().yaw == doctest::Approx(ref.yaw).epsilon(1e-12));
    CHECK(env.state().vx == doctest::Approx(ref.vx).epsilon(1e-12));
    CHECK(env.state().vy == doctest::Approx(ref.vy).epsilon(1e-12));
    CHECK(env.state().omega == doctest::Approx(ref.om).epsilon(1e-12));
    for (int j = 0; j < cfg.nj; ++j) {
      CHECK(env.state().theta[j] == doctest::Approx(ref.th[j]).epsilon(1e-12));
      CHECK(env.state().theta_dot[j] == doctest::Approx(ref.thd[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("same seed and actions give bit-identical trajectories") {
  EnvConfig cfg;
  cfg.push_enabled = true;
  cfg.push_prob = 1.0;
  DatasetGenConfig dcfg;
  dcfg.num_clips = 4;
  ReferenceDataset ds = generate_dataset(dcfg, 99);

  auto run = [&](std::vector<double>& out) {
    PlanarEnv env(cfg, 42, 3);
    Rng act(7);
    std::vector<double> u(cfg.action_dim());
    for (int ep = 0; ep < 3; ++ep) {
      env.reset(&ds, 0.8);
      for (int k = 0; k < 120; ++k) {
        for (auto& v : u) v = act.uniform(-1, 1);
        env.step(u);
        out.push_back(env.state().px);
        out.push_back(env.state().py);
        out.push_back(env.state().yaw);
        out.push_back(env.state().vx);
        out.push_back(env.state().theta[2]);
      }
    }
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("termination reasons and bootstrap flags") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 13, 0);
  env.reset_default();
  std::vector<double> u(cfg.action_dim(), 0.0);

  SUBCASE("after_last_goal fires strictly past the horizon") {
    int last_goal = 20;
    for (int k = 0; k < 70; ++k) env.step(u);  // t = 70
    CHECK_FALSE(env.check_termination(last_goal).done);  // t = last+50 exactly
    env.step(u);                                          // t = 71
    TermRecord tr = env.check_termination(last_goal);
    CHECK(tr.done);
    CHECK(tr.reason == TermReason::after_last_goal);
    CHECK(tr.bootstrap);
  }
  SUBCASE("timeout bootstraps") {
    for (int k = 0; k < cfg.max_steps; ++k) env.step(u);
    TermRecord tr = env.check_termination(-1);
    CHECK(tr.done);
    CHECK(tr.reason == TermReason::timeout);
    CHECK(tr.bootstrap);
  }
  SUBCASE("joint limit fails without bootstrap") {
    EnvState s = env.state();
    s.theta[1] = 2.5;
    env.set_state(s);
    TermRecord tr = env.check_termination(-1);
    CHECK(tr.done);
    CHECK(tr.reason == TermReason::joint_limit);
    CHECK_FALSE(tr.bootstrap);
  }
  SUBCASE("divergence fails without bootstrap") {
    EnvState s = env.state();
    s.px = 60.0;
    env.set_state(s);
    TermRecord tr = env.check_termination(-1);
    CHECK(tr.done);
    CHECK(tr.reason == TermReason::diverged);
    CHECK_FALSE(tr.bootstrap);
  }
}

TEST_CASE("RSI hits the configured fraction") {
  EnvConfig cfg;
  DatasetGenConfig dcfg;
  dcfg.num_clips = 6;
  ReferenceDataset ds = generate_dataset(dcfg, 5);
  PlanarEnv env(cfg, 17, 0);
  int rsi = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    env.reset(&ds, 0.8);
    const EnvState& s = env.state();
    bool is_default = (s.yaw == 0.0 && s.theta[0] == 0.0 && s.theta[1] == 0.0);
    if (!is_default) ++rsi;
  }
  double frac = static_cast<double>(rsi) / n;
  CHECK(frac > 0.78);
  CHECK(frac < 0.82);
}

TEST_CASE("RSI copies the dataset frame including body-frame velocity") {
  EnvConfig cfg;
  DatasetGenConfig dcfg;
  dcfg.num_clips = 3;
  dcfg.zero_speed_fraction = 0.0;
  ReferenceDataset ds = generate_dataset(dcfg, 31);
  PlanarEnv env(cfg, 19, 0);
  bool found = false;
  for (int trial = 0; trial < 50 && !found; ++trial) {
    env.reset(&ds, 1.0);
    const EnvState& s = env.state();
    // locate the sampled frame by exact pose match
    for (const auto& clip : ds.clips) {
      for (int f = 0; f < clip.frames; ++f) {
        if (clip.at(f, Clip::kX) == s.px && clip.at(f, Clip::kY) == s.py &&
            std::abs(wrap_pi(clip.at(f, Clip::kYaw)) - s.yaw) < 1e-15) {
          double wx, wy;
          rotate2(s.yaw, s.vx, s.vy, wx, wy);
          CHECK(wx == doctest::Approx(clip.at(f, clip.vx_col())).epsilon(1e-12));
          CHECK(wy == doctest::Approx(clip.at(f, clip.vy_col())).epsilon(1e-12));
          CHECK(s.omega == clip.at(f, clip.omega_col()));
          for (int j = 0; j < cfg.nj; ++j)
            CHECK(s.theta[j] == clip.at(f, Clip::kTheta0 + j));
          found = true;
        }
      }
    }
  }
  CHECK(found);
}

TEST_CASE("first step after reset reports zero rates") {
  EnvConfig cfg;
  PlanarEnv env(cfg, 23, 0);
  env.reset_default();
  std::vector<double> u(cfg.action_dim(), 0.9);
  env.step(u);
  const StepDerived& d = env.derived();
  CHECK(d.base_acc_x == 0.0);
  CHECK(d.base_acc_y == 0.0);
  for (double v : d.joint_acc) CHECK(v == 0.0);
  for (double v : d.action_rate) CHECK(v == 0.0);
  env.step(u);
  CHECK(env.derived().base_acc_x != 0.0);         // accelerating forward
  CHECK(env.derived().action_rate[0] == 0.0);     // action unchanged
  std::vector<double> u2(cfg.action_dim(), 0.7);
  env.step(u2);
  CHECK(env.derived().action_rate[0] == doctest::Approx(-0.2 / cfg.dt).epsilon(1e-9));
}

TEST_CASE("pushes happen exactly when scheduled") {
  EnvConfig cfg;
  cfg.push_enabled = true;
  cfg.push_prob = 1.0;
  std::vector<double> u(cfg.action_dim(), 0.0);
  int pushed_episodes = 0;
  for (int ep = 0; ep < 20; ++ep) {
    PlanarEnv env(cfg, 100 + ep, 0);
    env.reset_default();
    bool pushed = false;
    for (int k = 0; k < cfg.max_steps; ++k) {
      env.step(u);
      if (std::hypot(env.state().vx, env.state().vy) > 1e-12 && !pushed) {
        pushed = true;
        CHECK(std::hypot(env.state().vx, env.state().vy) <= cfg.push_vmax + 1e-12);
      }
    }
    if (pushed) ++pushed_episodes;
  }
  CHECK(pushed_episodes == 20);

  cfg.push_enabled = false;
  PlanarEnv env(cfg, 1234, 0);
  env.reset_default();
  for (int k = 0; k < cfg.max_steps; ++k) {
    env.step(u);
    CHECK(env.state().vx == 0.0);
    CHECK(env.state().vy == 0.0);
  }
}

TEST_CASE("generated dataset satisfies the corpus requirements") {
  DatasetGenConfig cfg;
  ReferenceDataset ds = generate_dataset(cfg, 77);
  CHECK(static_cast<int>(ds.clips.size()) >= 20);
  CHECK(ds.total_seconds() >= 30.0);
  CHECK(ds.fps == 50);
  for (const auto& c : ds.clips) {
    CHECK(c.frames >= static_cast<int>(cfg.duration_lo * cfg.fps) - 1);
    CHECK(c.frames <= static_cast<int>(cfg.duration_hi * cfg.fps) + 1);
  }
}

TEST_CASE("stored velocities are exact forward differences") {
  DatasetGenConfig cfg;
  cfg.num_clips = 8;
  ReferenceDataset ds = generate_dataset(cfg, 123);
  const double dt = 1.0 / ds.fps;
  for (const auto& c : ds.clips) {
    for (int f = 0; f + 1 < c.frames; ++f) {
      CHECK(c.at(f, c.vx_col()) == (c.at(f + 1, Clip::kX) - c.at(f, Clip::kX)) / dt);
      CHECK(c.at(f, c.vy_col()) == (c.at(f + 1, Clip::kY) - c.at(f, Clip::kY)) / dt);
      CHECK(c.at(f, c.omega_col()) ==
            wrap_pi(c.at(f + 1, Clip::kYaw) - c.at(f, Clip::kYaw)) / dt);
      for (int j = 0; j < c.nj; ++j)
        CHECK(c.at(f, c.theta_dot_col(j)) ==
              (c.at(f + 1, Clip::kTheta0 + j) - c.at(f, Clip::kTheta0 + j)) / dt);
    }
    int last = c.frames - 1;
    CHECK(c.at(last, c.vx_col()) == c.at(last - 1, c.vx_col()));
    CHECK(c.at(last, c.theta_dot_col(0)) == c.at(last - 1, c.theta_dot_col(0)));
  }
}

TEST_CASE("zero-speed clips stand still and keep the base gait frequency") {
  DatasetGenConfig cfg;
  cfg.num_clips = 10;
  cfg.zero_speed_fraction = 0.2;  // first two clips stationary
  ReferenceDataset ds = generate_dataset(cfg, 314);
  const Clip& c = ds.clips[0];
  for (int f = 0; f < c.frames; ++f) {
    CHECK(c.at(f, Clip::kX) == 0.0);
    CHECK(c.at(f, Clip::kY) == 0.0);
  }
  // base frequency 0.5 Hz -> period of exactly 100 frames at 50 fps
  const int period = static_cast<int>(std::lround(ds.fps / cfg.gait_freq_base));
  double max_dev = 0, amp = 0;
  for (int f = 0; f + period < c.frames; ++f)
    for (int j = 0; j < c.nj; ++j) {
      max_dev = std::max(max_dev, std::abs(c.at(f + period, Clip::kTheta0 + j) -
                                           c.at(f, Clip::kTheta0 + j)));
      amp = std::max(amp, std::abs(c.at(f, Clip::kTheta0 + j)));
    }
  CHECK(max_dev < 1e-9);
  CHECK(amp > 0.1);  // the joints do oscillate

  // a clip moving at speed s has gait frequency 0.5 + s, so the 100-frame
  // shift is visibly aperiodic for generic speeds
  const Clip& m = ds.clips[9];
  bool moving = std::abs(m.at(m.frames - 2, m.vx_col())) > 1e-6 ||
                std::abs(m.at(m.frames - 2, m.vy_col())) > 1e-6;
  REQUIRE(moving);
  double dev = 0;
  for (int f = 0; f + period < m.frames; ++f)
    dev = std::max(dev, std::abs(m.at(f + period, Clip::kTheta0) - m.at(f, Clip::kTheta0)));
  CHECK(dev > 0.01);
}

TEST_CASE("dataset io round trips") {
  DatasetGenConfig cfg;
  cfg.num_clips = 5;
  ReferenceDataset ds = generate_dataset(cfg, 2718);

  SUBCASE("csv preserves doubles exactly") {
    std::string p = temp_path("ds.csv");
    save_dataset(p, ds, DatasetFormat::csv);
    ReferenceDataset back = load_dataset(p);
    REQUIRE(back.clips.size() == ds.clips.size());
    CHECK(back.fps == ds.fps);
    CHECK(back.nj == ds.nj);
    for (size_t c = 0; c < ds.clips.size(); ++c) {
      REQUIRE(back.clips[c].frames == ds.clips[c].frames);
      for (size_t i = 0; i < ds.clips[c].data.size(); ++i)
        CHECK(back.clips[c].data[i] == ds.clips[c].data[i]);
    }
    std::remove(p.c_str());
  }
  SUBCASE("binary stays within f32 rounding") {
    std::string p = temp_path("ds.bin");
    save_dataset(p, ds, DatasetFormat::bin_f32);
    ReferenceDataset back = load_dataset(p);
    REQUIRE(back.clips.size() == ds.clips.size());
    for (size_t c = 0; c < ds.clips.size(); ++c)
      for (size_t i = 0; i < ds.clips[c].data.size(); ++i) {
        double a = ds.clips[c].data[i], b = back.clips[c].data[i];
        CHECK(std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(a)));
      }
    std::remove(p.c_str());
  }
  SUBCASE("same seed saves byte-identical files") {
    ReferenceDataset ds2 = generate_dataset(cfg, 2718);
    std::string p1 = temp_path("ds1.bin"), p2 = temp_path("ds2.bin");
    save_dataset(p1, ds, DatasetFormat::bin_f32);
    save_dataset(p2, ds2, DatasetFormat::bin_f32);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::stringstream b1, b2;
    b1 << f1.rdbuf();
    b2 << f2.rdbuf();
    CHECK(b1.str() == b2.str());
    CHECK(!b1.str().empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
  }
  SUBCASE("unknown format and truncated files are rejected") {
    std::string p = temp_path("ds_bad");
    {
      std::ofstream out(p);
      out << "{\"clips\":[10],\"format\":\"f64x\",\"fps\":50,\"nj\":4,\"version\":1}\n";
    }
    CHECK_THROWS(load_dataset(p));
    {
      std::ofstream out(p);
      out << "{\"clips\":[10],\"format\":\"bin_f32\",\"fps\":50,\"nj\":4,\"version\":1}\n";
      out << "shrt";
    }
    CHECK_THROWS(load_dataset(p));
    std::remove(p.c_str());
  }
}

TEST_CASE("style features agree between clip frames and env states") {
  DatasetGenConfig cfg;
  cfg.num_clips = 2;
  cfg.zero_speed_fraction = 0.0;
  ReferenceDataset ds = generate_dataset(cfg, 404);
  const Clip& c = ds.clips[1];
  const int f = 17;
  std::vector<double> from_clip(style_feature_dim(c.nj));
  style_features_from_clip(c, f, from_clip.data());

  auto state_from_frame = [&](int frame) {
    EnvState s;
    s.theta.resize(c.nj);
    s.theta_dot.resize(c.nj);
    s.a_prev.assign(3 + c.nj, 0.0);
    s.px = c.at(frame, Clip::kX);
    s.py = c.at(frame, Clip::kY);
    s.yaw = c.at(frame, Clip::kYaw);
    rotate2(-s.yaw, c.at(frame, c.vx_col()), c.at(frame, c.vy_col()), s.vx, s.vy);
    s.omega = c.at(frame, c.omega_col());
    for (int j = 0; j < c.nj; ++j) {
      s.theta[j] = c.at(frame, Clip::kTheta0 + j);
      s.theta_dot[j] = c.at(frame, c.theta_dot_col(j));
    }
    return s;
  };
  std::vector<double> from_states(style_feature_dim(c.nj));
  EnvState s0 = state_from_frame(f), s1 = state_from_frame(f + 1);
  style_features_from_states(s0, s1, from_states.data());
  for (int i = 0; i < style_feature_dim(c.nj); ++i)
    CHECK(from_states[i] == doctest::Approx(from_clip[i]).epsilon(1e-12));
}
