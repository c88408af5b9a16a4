#pragma once

#include "keyloco/sim/dataset.hpp"
#include "keyloco/util/angles.hpp"
#include "keyloco/util/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace keyloco::sim {

struct EnvConfig {
  int nj = 4;
  double dt = 0.02;              // 50 Hz
  double a_max = 16.0;           // m/s^2, per body axis
  double alpha_max = 20.0;       // rad/s^2
  double c_v = 0.8;              // linear damping
  double c_w = 1.0;              // yaw damping
  double kp = 40.0, kd = 2.0;    // joint PD
  double theta_hard = 2.0;       // rad, termination
  double theta_soft = 1.6;       // rad, feeds the soft-limit reward kernel
  double joint_target_scale = 1.2;  // rad commanded per unit action
  double theta_ddot_max = 250.0;
  int max_steps = 600;
  double diverge_bound = 50.0;   // m; see notes: the paper leaves this open
  bool push_enabled = false;
  double push_prob = 0.2;        // per episode
  double push_vmax = 1.0;        // m/s impulse magnitude

  int action_dim() const { return 3 + nj; }

  void validate() const {
    if (nj < 1) throw std::runtime_error("env: nj must be >= 1");
    if (theta_soft >= theta_hard) throw std::runtime_error("env: soft limit must be inside hard limit");
    if (dt <= 0 || a_max <= 0 || alpha_max <= 0) throw std::runtime_error("env: bad dynamics constants");
  }
};

struct EnvState {
  double px = 0, py = 0;   // world (m)
  double yaw = 0;          // wrapped to (-pi, pi]
  double vx = 0, vy = 0;   // body frame (m/s)
  double omega = 0;        // rad/s
  std::vector<double> theta, theta_dot;
  std::vector<double> a_prev;  // previous clamped action, normalized units
  int t_step = 0;
  double clock = 0;        // s
};

enum class TermReason : uint8_t { none, after_last_goal, timeout, joint_limit, diverged };

inline const char* term_name(TermReason r) {
  switch (r) {
    case TermReason::none: return "none";
    case TermReason::after_last_goal: return "after_last_goal";
    case TermReason::timeout: return "timeout";
    case TermReason::joint_limit: return "joint_limit";
    case TermReason::diverged: return "diverged";
  }
  return "?";
}

struct TermRecord {
  bool done = false;
  TermReason reason = TermReason::none;
  bool bootstrap = false;  // true when the episode ended without failing
};

// Finite-difference rates for the regularization rewards; zeroed on the
// first step after a reset where no valid history exists.
struct StepDerived {
  double base_acc_x = 0, base_acc_y = 0;  // world frame, m/s^2
  std::vector<double> joint_acc;          // rad/s^2
  std::vector<double> action_rate;        // 1/s, normalized action units
};

// Planar rigid base plus PD-tracked joints, semi-implicit Euler at 50 Hz.
class PlanarEnv {
 public:
  PlanarEnv(const EnvConfig& cfg, uint64_t run_seed, int env_index)
      : cfg_(cfg), rng_(Rng::derive(run_seed, static_cast<uint64_t>(env_index), 0x656e76)) {
    cfg_.validate();
    clear_state();
  }

  const EnvConfig& config() const { return cfg_; }
  const EnvState& state() const { return s_; }
  const StepDerived& derived() const { return d_; }

  // Default reset: zero pose/velocity, default (zero) posture.
  void reset_default() {
    clear_state();
    schedule_push();
  }

  // 80/20 RSI reset against the reference dataset.
  void reset(const ReferenceDataset* ds, double rsi_prob) {
    if (rsi_prob > 0 && (ds == nullptr || ds->clips.empty()))
      throw std::runtime_error("env reset: RSI requested without a dataset");
    if (ds != nullptr && !ds->clips.empty() && rng_.bernoulli(rsi_prob)) {
      const Clip& clip = ds->clips[rng_.uniform_int(0, static_cast<int>(ds->clips.size()) - 1)];
      int f = rng_.uniform_int(0, clip.frames - 1);
      clear_state();
      s_.px = clip.at(f, Clip::kX);
      s_.py = clip.at(f, Clip::kY);
      s_.yaw = wrap_pi(clip.at(f, Clip::kYaw));
      // dataset velocities are world-frame; body frame is what the state carries
      double wx = clip.at(f, clip.vx_col());
      double wy = clip.at(f, clip.vy_col());
      rotate2(-s_.yaw, wx, wy, s_.vx, s_.vy);
      s_.omega = clip.at(f, clip.omega_col());
      for (int j = 0; j < cfg_.nj; ++j) {
        s_.theta[j] = clip.at(f, Clip::kTheta0 + j);
        s_.theta_dot[j] = clip.at(f, clip.theta_dot_col(j));
      }
    } else {
      clear_state();
    }
    schedule_push();
  }

  // Teleport-style state injection (eval fixtures, tests). Invalidates the
  // step history, so the next step reports zero finite-difference rates.
  void set_state(const EnvState& s) {
    if (static_cast<int>(s.theta.size()) != cfg_.nj ||
        static_cast<int>(s.theta_dot.size()) != cfg_.nj ||
        static_cast<int>(s.a_prev.size()) != cfg_.action_dim())
      throw std::runtime_error("env set_state: dimension mismatch");
    s_ = s;
    s_.yaw = wrap_pi(s_.yaw);
    steps_since_reset_ = 0;
    push_step_ = -1;
    zero_derived();
  }

  // u: normalized action, clamped per channel to [-1, 1] before scaling.
  void step(const std::vector<double>& u) {
    if (static_cast<int>(u.size()) != cfg_.action_dim())
      throw std::runtime_error("env step: action dim " + std::to_string(u.size()));
    const double dt = cfg_.dt;
    std::vector<double> uc(u.size());
    for (size_t i = 0; i < u.size(); ++i) uc[i] = std::clamp(u[i], -1.0, 1.0);

    const double prev_vx = s_.vx, prev_vy = s_.vy, prev_yaw = s_.yaw;
    std::vector<double> prev_theta_dot = s_.theta_dot;

    const double ax = uc[0] * cfg_.a_max;
    const double ay = uc[1] * cfg_.a_max;
    const double aw = uc[2] * cfg_.alpha_max;

    s_.vx += dt * (ax - cfg_.c_v * s_.vx);
    s_.vy += dt * (ay - cfg_.c_v * s_.vy);
    double wvx, wvy;
    rotate2(s_.yaw, s_.vx, s_.vy, wvx, wvy);
    s_.px += dt * wvx;
    s_.py += dt * wvy;
    s_.omega += dt * (aw - cfg_.c_w * s_.omega);
    s_.yaw = wrap_pi(s_.yaw + dt * s_.omega);

    for (int j = 0; j < cfg_.nj; ++j) {
      const double target = uc[3 + j] * cfg_.joint_target_scale;
      double acc = cfg_.kp * (target - s_.theta[j]) - cfg_.kd * s_.theta_dot[j];
      acc = std::clamp(acc, -cfg_.theta_ddot_max, cfg_.theta_ddot_max);
      s_.theta_dot[j] += dt * acc;
      s_.theta[j] += dt * s_.theta_dot[j];
    }

    ++s_.t_step;
    s_.clock += dt;
    ++steps_since_reset_;

    if (cfg_.push_enabled && s_.t_step == push_step_) {
      double mag = rng_.uniform(0.0, cfg_.push_vmax);
      double dir = rng_.uniform(-kPi, kPi);
      double ix, iy;
      rotate2(dir - s_.yaw, mag, 0.0, ix, iy);  // world-frame push seen in body frame
      s_.vx += ix;
      s_.vy += iy;
    }

    if (steps_since_reset_ <= 1) {
      zero_derived();
    } else {
      double pwx, pwy;
      rotate2(prev_yaw, prev_vx, prev_vy, pwx, pwy);
      double nwx, nwy;
      rotate2(s_.yaw, s_.vx, s_.vy, nwx, nwy);
      d_.base_acc_x = (nwx - pwx) / dt;
      d_.base_acc_y = (nwy - pwy) / dt;
      for (int j = 0; j < cfg_.nj; ++j)
        d_.joint_acc[j] = (s_.theta_dot[j] - prev_theta_dot[j]) / dt;
      for (int i = 0; i < cfg_.action_dim(); ++i)
        d_.action_rate[i] = (uc[i] - s_.a_prev[i]) / dt;
    }
    s_.a_prev = uc;
  }

  TermRecord check_termination(int last_goal_step) const {
    for (int j = 0; j < cfg_.nj; ++j)
      if (std::abs(s_.theta[j]) > cfg_.theta_hard)
        return {true, TermReason::joint_limit, false};
    if (std::hypot(s_.px, s_.py) > cfg_.diverge_bound)
      return {true, TermReason::diverged, false};
    if (last_goal_step >= 0 && s_.t_step > last_goal_step + 50)
      return {true, TermReason::after_last_goal, true};
    if (s_.t_step >= cfg_.max_steps) return {true, TermReason::timeout, true};
    return {};
  }

 private:
  EnvConfig cfg_;
  EnvState s_;
  StepDerived d_;
  Rng rng_;
  int steps_since_reset_ = 0;
  int push_step_ = -1;

  void clear_state() {
    s_ = EnvState{};
    s_.theta.assign(cfg_.nj, 0.0);
    s_.theta_dot.assign(cfg_.nj, 0.0);
    s_.a_prev.assign(cfg_.action_dim(), 0.0);
    steps_since_reset_ = 0;
    zero_derived();
  }

  void zero_derived() {
    d_.base_acc_x = d_.base_acc_y = 0.0;
    d_.joint_acc.assign(cfg_.nj, 0.0);
    d_.action_rate.assign(cfg_.action_dim(), 0.0);
  }

  void schedule_push() {
    push_step_ = -1;
    if (cfg_.push_enabled && rng_.bernoulli(cfg_.push_prob))
      push_step_ = s_.t_step + rng_.uniform_int(1, cfg_.max_steps);
  }
};

// Policy-side counterpart of style_features_from_clip: two consecutive env
// states, same layout (body velocity, yaw rate, joint angles, joint rates).
inline void style_features_from_states(const EnvState& s0, const EnvState& s1, double* out) {
  int k = 0;
  for (const EnvState* s : {&s0, &s1}) {
    out[k++] = s->vx;
    out[k++] = s->vy;
    out[k++] = s->omega;
    for (double v : s->theta) out[k++] = v;
    for (double v : s->theta_dot) out[k++] = v;
  }
}

}  // namespace keyloco::sim
