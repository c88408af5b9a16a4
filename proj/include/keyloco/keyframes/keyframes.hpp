#pragma once

#include "keyloco/autodiff/array.hpp"
#include "keyloco/sim/dataset.hpp"
#include "keyloco/sim/env.hpp"
#include "keyloco/util/angles.hpp"
#include "keyloco/util/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace keyloco::keyframes {

// Target times are stored as env step indices so the sparse reward gate is
// an exact integer comparison; seconds are derived via dt.
struct Keyframe {
  int t_step = 0;
  bool has_position = false, has_yaw = false, has_posture = false;
  double px = 0, py = 0;
  double yaw = 0;
  std::vector<double> theta;

  double t_sec(double dt) const { return t_step * dt; }
};

struct KeyframeSet {
  std::vector<Keyframe> frames;  // strictly increasing t_step

  int last_goal_step() const { return frames.empty() ? -1 : frames.back().t_step; }

  void validate() const {
    for (size_t i = 1; i < frames.size(); ++i)
      if (frames[i].t_step <= frames[i - 1].t_step)
        throw std::runtime_error("keyframes: target times must be strictly increasing");
  }
};

// All components in the robot's current body frame / relative form.
struct GoalError {
  double dpx = 0, dpy = 0;        // body frame (m)
  double dyaw = 0;                // wrapped (rad)
  std::vector<double> dtheta;     // rad
  double time_to_goal = 0;        // s, negative once the target time passed

  double pos_norm() const { return std::hypot(dpx, dpy); }
  double posture_rmse() const {
    if (dtheta.empty()) return 0;
    double s = 0;
    for (double d : dtheta) s += d * d;
    return std::sqrt(s / dtheta.size());
  }
};

inline GoalError goal_error(const sim::EnvState& s, const Keyframe& kf, double dt, int nj) {
  GoalError e;
  e.dtheta.assign(nj, 0.0);
  if (kf.has_position) rotate2(-s.yaw, kf.px - s.px, kf.py - s.py, e.dpx, e.dpy);
  if (kf.has_yaw) e.dyaw = wrap_pi(kf.yaw - s.yaw);
  if (kf.has_posture)
    for (int j = 0; j < nj; ++j) e.dtheta[j] = kf.theta[j] - s.theta[j];
  e.time_to_goal = (kf.t_step - s.t_step) * dt;
  return e;
}

// Token layout, one row per sequence slot:
//   [ v_b(2) | omega(1) | theta(nj) | theta_dot(nj) | a_prev(3+nj) |
//     dp_b(2) | dyaw(1) | dtheta(nj) | presence(3) | tt/tt_scale(1) ]
// Row 0 is the robot's own state with zeroed goal fields and is never
// masked. Goal rows are masked once a keyframe is more than `horizon_past`
// seconds behind (strictly), or when the slot is beyond the episode's n_k.
struct TokenConfig {
  int max_keyframes = 4;   // N_k: fixed sequence capacity
  double horizon_past = 1.0;  // s
  double tt_scale = 2.0;      // s, normalizes time-to-goal

  int state_dim(int nj) const { return 3 + 2 * nj + (3 + nj); }
  int token_dim(int nj) const { return state_dim(nj) + 2 + 1 + nj + 3 + 1; }
  int rows() const { return max_keyframes + 1; }
};

enum class GoalVisibility { all_goals, next_goal_only };

struct TokenSequence {
  autodiff::Array<double> tokens;  // [rows, token_dim]
  std::vector<uint8_t> masked;     // [rows]
};

inline TokenSequence build_tokens(const sim::EnvState& s, const KeyframeSet& kfs,
                                  const TokenConfig& cfg, double dt, int nj,
                                  GoalVisibility vis = GoalVisibility::all_goals) {
  const int n_k = static_cast<int>(kfs.frames.size());
  if (n_k > cfg.max_keyframes)
    throw std::runtime_error("build_tokens: more keyframes than sequence slots");
  const int horizon_steps = static_cast<int>(std::lround(cfg.horizon_past / dt));

  TokenSequence seq;
  seq.tokens = autodiff::Array<double>::zeros(cfg.rows(), cfg.token_dim(nj));
  seq.masked.assign(cfg.rows(), 0);

  // next_goal_only: keep just the earliest keyframe that is not yet reached
  int next_idx = -1;
  if (vis == GoalVisibility::next_goal_only) {
    for (int i = 0; i < n_k; ++i)
      if (kfs.frames[i].t_step >= s.t_step) { next_idx = i; break; }
  }

  for (int row = 0; row < cfg.rows(); ++row) {
    double* tok = &seq.tokens.at(row, 0);
    int k = 0;
    tok[k++] = s.vx;
    tok[k++] = s.vy;
    tok[k++] = s.omega;
    for (int j = 0; j < nj; ++j) tok[k++] = s.theta[j];
    for (int j = 0; j < nj; ++j) tok[k++] = s.theta_dot[j];
    for (double a : s.a_prev) tok[k++] = a;

    if (row == 0) continue;  // self-goal token: goal fields stay zero, never masked
    const int i = row - 1;
    if (i >= n_k) { seq.masked[row] = 1; continue; }
    const Keyframe& kf = kfs.frames[i];
    if (s.t_step > kf.t_step + horizon_steps) { seq.masked[row] = 1; continue; }
    if (vis == GoalVisibility::next_goal_only && i != next_idx) { seq.masked[row] = 1; continue; }

    GoalError e = goal_error(s, kf, dt, nj);
    tok[k++] = e.dpx;
    tok[k++] = e.dpy;
    tok[k++] = e.dyaw;
    for (int j = 0; j < nj; ++j) tok[k++] = e.dtheta[j];
    tok[k++] = kf.has_position ? 1.0 : 0.0;
    tok[k++] = kf.has_yaw ? 1.0 : 0.0;
    tok[k++] = kf.has_posture ? 1.0 : 0.0;
    tok[k++] = e.time_to_goal / cfg.tt_scale;
  }
  return seq;
}

// Which goal components an experiment tracks.
struct GoalComponents {
  bool position = true, yaw = true, posture = false;
};

struct SampleRanges {
  int interval_lo = 25, interval_hi = 50;  // steps between keyframes
  double radius_lo = 0.5, radius_hi = 1.0;  // m
  double dir_range = kPi / 3;               // rad, heading-relative direction
  double dyaw_range = kPi / 3;              // rad, per-keyframe yaw increment
};

// Random keyframes: each target sits radius meters from the previous one in
// a direction sampled relative to the previous target yaw, with an
// incremental yaw change; postures come from random dataset frames.
inline KeyframeSet sample_random_keyframes(const SampleRanges& r, int n_k,
                                           const sim::EnvState& s0,
                                           const GoalComponents& comps,
                                           const sim::ReferenceDataset* ds, int nj, Rng& rng) {
  KeyframeSet set;
  double px = s0.px, py = s0.py, yaw = s0.yaw;
  int t = s0.t_step;
  for (int i = 0; i < n_k; ++i) {
    Keyframe kf;
    t += rng.uniform_int(r.interval_lo, r.interval_hi);
    kf.t_step = t;
    const double radius = rng.uniform(r.radius_lo, r.radius_hi);
    const double dir = rng.uniform(-r.dir_range, r.dir_range);
    px += radius * std::cos(yaw + dir);
    py += radius * std::sin(yaw + dir);
    yaw = wrap_pi(yaw + rng.uniform(-r.dyaw_range, r.dyaw_range));
    kf.has_position = comps.position;
    kf.px = px;
    kf.py = py;
    kf.has_yaw = comps.yaw;
    kf.yaw = yaw;
    if (comps.posture) {
      if (ds == nullptr || ds->clips.empty())
        throw std::runtime_error("sample_random_keyframes: posture goals need a dataset");
      const sim::Clip& clip = ds->clips[rng.uniform_int(0, static_cast<int>(ds->clips.size()) - 1)];
      int f = rng.uniform_int(0, clip.frames - 1);
      kf.has_posture = true;
      kf.theta.resize(nj);
      for (int j = 0; j < nj; ++j) kf.theta[j] = clip.at(f, sim::Clip::kTheta0 + j);
    }
    set.frames.push_back(std::move(kf));
  }
  set.validate();
  return set;
}

// Dataset keyframes: pick a clip segment and read future targets off it,
// re-expressed so the segment's start pose coincides with the robot's
// current pose. Throws if no clip is long enough for the drawn intervals.
inline KeyframeSet sample_dataset_keyframes(const SampleRanges& r, int n_k,
                                            const sim::EnvState& s0,
                                            const GoalComponents& comps,
                                            const sim::ReferenceDataset& ds, int nj, Rng& rng) {
  if (ds.clips.empty()) throw std::runtime_error("sample_dataset_keyframes: empty dataset");
  std::vector<int> offsets(n_k);
  int total = 0;
  for (int i = 0; i < n_k; ++i) {
    total += rng.uniform_int(r.interval_lo, r.interval_hi);
    offsets[i] = total;
  }

  int clip_idx = -1, start = -1;
  for (int attempt = 0; attempt < 256; ++attempt) {
    int c = rng.uniform_int(0, static_cast<int>(ds.clips.size()) - 1);
    int room = ds.clips[c].frames - 1 - total;
    if (room < 0) continue;
    clip_idx = c;
    start = rng.uniform_int(0, room);
    break;
  }
  if (clip_idx < 0)
    throw std::runtime_error("sample_dataset_keyframes: no clip long enough for sampled horizon");

  const sim::Clip& clip = ds.clips[clip_idx];
  const double cx = clip.at(start, sim::Clip::kX);
  const double cy = clip.at(start, sim::Clip::kY);
  const double cyaw = clip.at(start, sim::Clip::kYaw);
  const double dyaw0 = wrap_pi(s0.yaw - cyaw);  // clip frame -> robot frame

  KeyframeSet set;
  for (int i = 0; i < n_k; ++i) {
    const int f = start + offsets[i];
    Keyframe kf;
    kf.t_step = s0.t_step + offsets[i];
    if (comps.position) {
      double rx, ry;
      rotate2(dyaw0, clip.at(f, sim::Clip::kX) - cx, clip.at(f, sim::Clip::kY) - cy, rx, ry);
      kf.has_position = true;
      kf.px = s0.px + rx;
      kf.py = s0.py + ry;
    }
    if (comps.yaw) {
      kf.has_yaw = true;
      kf.yaw = wrap_pi(s0.yaw + wrap_pi(clip.at(f, sim::Clip::kYaw) - cyaw));
    }
    if (comps.posture) {
      kf.has_posture = true;
      kf.theta.resize(nj);
      for (int j = 0; j < nj; ++j) kf.theta[j] = clip.at(f, sim::Clip::kTheta0 + j);
    }
    set.frames.push_back(std::move(kf));
  }
  set.validate();
  return set;
}

// Probability of drawing random (vs dataset) keyframes: ramps linearly from
// 0 to p_max over the first half of training, flat afterwards.
inline double curriculum_mix(double progress, double p_max = 0.8) {
  if (progress <= 0) return 0.0;
  if (progress >= 0.5) return p_max;
  return p_max * (progress / 0.5);
}

}  // namespace keyloco::keyframes
