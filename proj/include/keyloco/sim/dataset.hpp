#pragma once

#include "keyloco/util/angles.hpp"
#include "keyloco/util/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace keyloco::sim {

// One motion clip at a fixed frame rate. Row-major frame storage, columns:
//   x, y, yaw, theta[0..nj), vx, vy, omega, theta_dot[0..nj)
// Velocities are world-frame forward differences of the stored poses; the
// last frame repeats the previous frame's velocities.
struct Clip {
  static constexpr int kX = 0, kY = 1, kYaw = 2, kTheta0 = 3;

  int frames = 0;
  int nj = 0;
  std::vector<double> data;

  int cols() const { return 6 + 2 * nj; }
  int vx_col() const { return 3 + nj; }
  int vy_col() const { return 4 + nj; }
  int omega_col() const { return 5 + nj; }
  int theta_dot_col(int j) const { return 6 + nj + j; }

  double at(int frame, int col) const { return data[static_cast<size_t>(frame) * cols() + col]; }
  double& at(int frame, int col) { return data[static_cast<size_t>(frame) * cols() + col]; }

  double duration(double fps) const { return frames / fps; }
};

struct ReferenceDataset {
  int fps = 50;
  int nj = 4;
  std::vector<Clip> clips;

  double total_seconds() const {
    double s = 0;
    for (const auto& c : clips) s += c.duration(fps);
    return s;
  }
};

struct DatasetGenConfig {
  int num_clips = 24;
  int nj = 4;
  int fps = 50;
  double duration_lo = 6.0, duration_hi = 10.0;  // s
  double speed_lo = 0.0, speed_hi = 1.5;         // m/s
  double zero_speed_fraction = 0.15;             // leading clips forced stationary
  double turn_amp_hi = 0.6;                      // rad/s heading-rate amplitude
  double turn_freq_lo = 0.05, turn_freq_hi = 0.2;  // Hz
  double joint_amp_lo = 0.2, joint_amp_hi = 0.9;   // rad
  double joint_offset = 0.3;                       // rad, +- range
  double gait_freq_base = 0.5;                     // Hz at zero speed
  double gait_freq_slope = 1.0;                    // Hz per (m/s)

  void validate() const {
    if (num_clips < 1 || nj < 1 || fps < 1) throw std::runtime_error("dataset gen: bad sizes");
    if (duration_lo > duration_hi || speed_lo > speed_hi)
      throw std::runtime_error("dataset gen: bad ranges");
  }
};

// Synthetic locomotion clips: the base follows smooth arcs at a per-clip
// speed while joints oscillate at a speed-dependent gait frequency, so the
// discriminator has a real speed/gait correlation to pick up.
inline ReferenceDataset generate_dataset(const DatasetGenConfig& cfg, uint64_t seed) {
  cfg.validate();
  ReferenceDataset ds;
  ds.fps = cfg.fps;
  ds.nj = cfg.nj;
  const double dt = 1.0 / cfg.fps;
  const int n_zero = std::min(
      cfg.num_clips,
      static_cast<int>(std::ceil(cfg.zero_speed_fraction * cfg.num_clips)));

  for (int c = 0; c < cfg.num_clips; ++c) {
    Rng rng = Rng::derive(seed, static_cast<uint64_t>(c), 0x64617461);
    Clip clip;
    clip.nj = cfg.nj;
    clip.frames = static_cast<int>(std::lround(rng.uniform(cfg.duration_lo, cfg.duration_hi) * cfg.fps));
    clip.data.assign(static_cast<size_t>(clip.frames) * clip.cols(), 0.0);

    const double speed = (c < n_zero) ? 0.0 : rng.uniform(cfg.speed_lo, cfg.speed_hi);
    const double yaw0 = rng.uniform(-kPi, kPi);
    const double turn_amp = rng.uniform(0.0, cfg.turn_amp_hi);
    const double turn_freq = rng.uniform(cfg.turn_freq_lo, cfg.turn_freq_hi);
    const double turn_phase = rng.uniform(0.0, kTwoPi);
    const double gait_freq = cfg.gait_freq_base + cfg.gait_freq_slope * speed;

    std::vector<double> amp(cfg.nj), phase(cfg.nj), offset(cfg.nj);
    for (int j = 0; j < cfg.nj; ++j) {
      amp[j] = rng.uniform(cfg.joint_amp_lo, cfg.joint_amp_hi);
      phase[j] = rng.uniform(0.0, kTwoPi);
      offset[j] = rng.uniform(-cfg.joint_offset, cfg.joint_offset);
    }

    // poses first: heading integrates a sinusoidal turn rate, position
    // integrates speed along the heading
    double x = 0, y = 0, yaw = yaw0;
    for (int f = 0; f < clip.frames; ++f) {
      const double t = f * dt;
      clip.at(f, Clip::kX) = x;
      clip.at(f, Clip::kY) = y;
      clip.at(f, Clip::kYaw) = wrap_pi(yaw);
      for (int j = 0; j < cfg.nj; ++j)
        clip.at(f, Clip::kTheta0 + j) = amp[j] * std::sin(kTwoPi * gait_freq * t + phase[j]) + offset[j];
      const double turn_rate = turn_amp * std::sin(kTwoPi * turn_freq * t + turn_phase);
      yaw += dt * turn_rate;
      x += dt * speed * std::cos(yaw);
      y += dt * speed * std::sin(yaw);
    }

    // velocities are forward differences of what was just stored
    for (int f = 0; f < clip.frames; ++f) {
      const int g = (f + 1 < clip.frames) ? f : f - 1;  // last frame copies previous
      if (g < 0) throw std::runtime_error("dataset gen: clip with a single frame");
      clip.at(f, clip.vx_col()) = (clip.at(g + 1, Clip::kX) - clip.at(g, Clip::kX)) / dt;
      clip.at(f, clip.vy_col()) = (clip.at(g + 1, Clip::kY) - clip.at(g, Clip::kY)) / dt;
      clip.at(f, clip.omega_col()) =
          wrap_pi(clip.at(g + 1, Clip::kYaw) - clip.at(g, Clip::kYaw)) / dt;
      for (int j = 0; j < cfg.nj; ++j)
        clip.at(f, clip.theta_dot_col(j)) =
            (clip.at(g + 1, Clip::kTheta0 + j) - clip.at(g, Clip::kTheta0 + j)) / dt;
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

// Style features for the discriminator: body-frame linear velocity, yaw
// rate, joint angles and joint velocities. Global pose stays out so the
// style signal is pose-invariant. One observation is two consecutive
// frames' features concatenated.
inline int style_feature_dim(int nj) { return (3 + 2 * nj) * 2; }

inline void style_features_from_clip(const Clip& clip, int frame, double* out) {
  int k = 0;
  for (int f = frame; f <= frame + 1; ++f) {
    const double yaw = clip.at(f, Clip::kYaw);
    double bx, by;
    rotate2(-yaw, clip.at(f, clip.vx_col()), clip.at(f, clip.vy_col()), bx, by);
    out[k++] = bx;
    out[k++] = by;
    out[k++] = clip.at(f, clip.omega_col());
    for (int j = 0; j < clip.nj; ++j) out[k++] = clip.at(f, Clip::kTheta0 + j);
    for (int j = 0; j < clip.nj; ++j) out[k++] = clip.at(f, clip.theta_dot_col(j));
  }
}

}  // namespace keyloco::sim
