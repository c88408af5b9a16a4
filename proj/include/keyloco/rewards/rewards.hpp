#pragma once

#include "keyloco/autodiff/tape.hpp"
#include "keyloco/keyframes/keyframes.hpp"
#include "keyloco/nets/discriminator.hpp"
#include "keyloco/sim/env.hpp"
#include "keyloco/util/angles.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace keyloco::rewards {

struct KernelSpec {
  double sigma = 1.0;  // sensitivity, > 0
  double delta = 0.0;  // tolerance, >= 0

  void validate() const {
    if (!(sigma > 0) || !(delta >= 0)) throw std::runtime_error("kernel: need sigma > 0, delta >= 0");
  }
};

// Error-to-reward kernel over the Euclidean norm of x. Errors inside the
// tolerance are free; beyond it the reward decays as a Gaussian in the
// excess. Angle errors must be wrapped to (-pi, pi] before they get here.
inline double kernel(const double* x, int n, const KernelSpec& k) {
  k.validate();
  double sq = 0;
  for (int i = 0; i < n; ++i) sq += x[i] * x[i];
  const double z = std::max(0.0, std::sqrt(sq) - k.delta) / k.sigma;
  return std::exp(-z * z);
}

inline double kernel(const std::vector<double>& x, const KernelSpec& k) {
  return kernel(x.data(), static_cast<int>(x.size()), k);
}

inline double kernel1(double x, const KernelSpec& k) { return kernel(&x, 1, k); }

// Per-term sensitivities and tolerances.
inline constexpr KernelSpec kActionRate{8.0, 0.0};
inline constexpr KernelSpec kBaseAccel{8.0, 0.0};
inline constexpr KernelSpec kJointAccel{150.0, 10.0};
inline constexpr KernelSpec kSoftLimit{0.1, 0.0};
inline constexpr KernelSpec kGoalPosition{0.2, 0.0};
inline constexpr KernelSpec kGoalYaw{0.3, 0.0};
// Planar base: no roll/pitch to penalize, kept for completeness.
inline constexpr KernelSpec kGoalRollPitch{0.1, 0.0};

// Posture sensitivity grows with the joint count so the per-joint
// tolerance stays constant.
inline KernelSpec goal_posture_spec(int nj) { return {0.2 * std::sqrt(static_cast<double>(nj)), 0.0}; }

// Default advantage weights per reward group.
inline constexpr double kWeightStyle = 0.5;
inline constexpr double kWeightGoal = 0.5;
inline constexpr double kWeightReg = 0.1;

struct RegTerms {
  double action_rate = 1, base_accel = 1, joint_accel = 1, soft_limit = 1;
  double product() const { return action_rate * base_accel * joint_accel * soft_limit; }
};

inline RegTerms regularization_terms(const sim::StepDerived& d, const std::vector<double>& theta,
                                     double theta_soft) {
  RegTerms t;
  t.action_rate = kernel(d.action_rate, kActionRate);
  const double acc[2] = {d.base_acc_x, d.base_acc_y};
  t.base_accel = kernel(acc, 2, kBaseAccel);
  t.joint_accel = kernel(d.joint_acc, kJointAccel);
  std::vector<double> excess(theta.size());
  for (size_t j = 0; j < theta.size(); ++j)
    excess[j] = std::max({theta[j] - theta_soft, -theta_soft - theta[j], 0.0});
  t.soft_limit = kernel(excess, kSoftLimit);
  return t;
}

inline double regularization_reward(const sim::StepDerived& d, const std::vector<double>& theta,
                                    double theta_soft) {
  return regularization_terms(d, theta, theta_soft).product();
}

// Product over the keyframe's present components. Only meaningful at the
// keyframe's tick; the gate lives in goal_reward below.
inline double goal_reward_at(const sim::EnvState& s, const keyframes::Keyframe& kf, int nj) {
  keyframes::GoalError e = keyframes::goal_error(s, kf, 0.0, nj);
  double r = 1.0;
  if (kf.has_position) {
    const double dp[2] = {e.dpx, e.dpy};
    r *= kernel(dp, 2, kGoalPosition);
  }
  if (kf.has_yaw) r *= kernel1(e.dyaw, kGoalYaw);
  if (kf.has_posture) r *= kernel(e.dtheta, goal_posture_spec(nj));
  return r;
}

// Sparse by construction: an exact step-index match opens the gate,
// everything else returns literal zero.
inline double goal_reward(const sim::EnvState& s, const keyframes::KeyframeSet& kfs, int nj) {
  for (const auto& kf : kfs.frames)
    if (kf.t_step == s.t_step) return goal_reward_at(s, kf, nj);
  return 0.0;
}

inline double style_reward(double d_score) {
  const double v = 1.0 - 0.25 * (d_score - 1.0) * (d_score - 1.0);
  return v > 0 ? v : 0.0;
}

// Least-squares discriminator objective with a gradient penalty on expert
// samples, assembled on the tape so one backward pass trains everything.
template <typename S>
struct DiscLossVars {
  autodiff::Var expert_term, policy_term, grad_penalty, total;
  autodiff::Var d_expert_mean, d_policy_mean;  // raw score means, diagnostics only
};

template <typename S>
DiscLossVars<S> discriminator_loss(autodiff::Tape<S>& t, const std::vector<autodiff::Var>& pv,
                                   const nets::Discriminator<S>& disc,
                                   const autodiff::Array<S>& expert,
                                   const autodiff::Array<S>& policy, double w_gp) {
  if (expert.shape[0] == 0 || policy.shape[0] == 0)
    throw std::runtime_error("discriminator_loss: empty batch");
  using autodiff::Var;
  std::vector<Var> pre_e;
  Var de = disc.forward(t, pv, t.input(expert), &pre_e);
  Var dp = disc.forward(t, pv, t.input(policy));
  DiscLossVars<S> out;
  out.expert_term = t.mean(t.square(t.add_const(de, S(-1))));
  out.policy_term = t.mean(t.square(t.add_const(dp, S(1))));
  out.d_expert_mean = t.mean(de);
  out.d_policy_mean = t.mean(dp);
  out.grad_penalty = disc.grad_penalty(t, pv, pre_e);
  out.total = t.add(t.add(out.expert_term, out.policy_term),
                    t.scale(out.grad_penalty, S(w_gp)));
  return out;
}

}  // namespace keyloco::rewards
