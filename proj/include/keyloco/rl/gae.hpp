#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace keyloco::rl {

enum class ValueTarget { gae_return, one_step_td };

// One environment's slice of a fixed-horizon rollout, one reward group.
//   next_value[t]: V(s_{t+1}) at terminations that bootstrap (timeout,
//   past-last-goal); ignored when the step neither terminates nor ends the
//   rollout. Failure terminations cut the tail to zero.
//   v_end: V(s_T) for the rollout truncation at the horizon.
struct GaeResult {
  std::vector<double> adv, target;
};

inline GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
                     const std::vector<uint8_t>& done, const std::vector<uint8_t>& bootstrap,
                     const std::vector<double>& next_value, double v_end, double gamma,
                     double lam, ValueTarget vt = ValueTarget::gae_return) {
  const size_t T = rewards.size();
  if (values.size() != T || done.size() != T || bootstrap.size() != T || next_value.size() != T)
    throw std::runtime_error("gae: shape mismatch");
  GaeResult out;
  out.adv.assign(T, 0.0);
  out.target.assign(T, 0.0);
  double next_adv = 0.0;
  for (size_t i = T; i-- > 0;) {
    double v_next;
    if (done[i]) {
      v_next = bootstrap[i] ? next_value[i] : 0.0;
      next_adv = 0.0;
    } else {
      v_next = (i + 1 < T) ? values[i + 1] : v_end;
    }
    const double delta = rewards[i] + gamma * v_next - values[i];
    out.adv[i] = delta + gamma * lam * next_adv;
    next_adv = out.adv[i];
    out.target[i] = (vt == ValueTarget::gae_return) ? out.adv[i] + values[i]
                                                    : rewards[i] + gamma * v_next;
  }
  return out;
}

struct NormStats {
  double mean = 0, stddev = 0;
  bool floored = false;  // zero-variance group hit the std floor
};

// In-place batch normalization with population std and a 1e-8 floor.
inline NormStats normalize_advantages(std::vector<double>& a) {
  if (a.empty()) throw std::runtime_error("normalize: empty batch");
  NormStats st;
  for (double v : a) st.mean += v;
  st.mean /= static_cast<double>(a.size());
  double var = 0;
  for (double v : a) var += (v - st.mean) * (v - st.mean);
  var /= static_cast<double>(a.size());
  st.stddev = std::sqrt(var);
  st.floored = st.stddev < 1e-8;
  const double denom = st.stddev + 1e-8;
  for (double& v : a) v = (v - st.mean) / denom;
  return st;
}

struct AdvantageBundle {
  std::vector<std::vector<double>> normalized;  // per group
  std::vector<NormStats> stats;
  std::vector<double> mixed;  // sum_i w_i * normalized_i
};

inline AdvantageBundle mix_advantages(const std::vector<std::vector<double>>& adv,
                                      const std::vector<double>& weights) {
  if (adv.empty() || adv.size() != weights.size())
    throw std::runtime_error("mix_advantages: group/weight mismatch");
  const size_t n = adv[0].size();
  AdvantageBundle b;
  b.normalized = adv;
  b.mixed.assign(n, 0.0);
  for (size_t g = 0; g < adv.size(); ++g) {
    if (adv[g].size() != n) throw std::runtime_error("mix_advantages: ragged groups");
    if (weights[g] < 0) throw std::runtime_error("mix_advantages: negative weight");
    b.stats.push_back(normalize_advantages(b.normalized[g]));
    for (size_t i = 0; i < n; ++i) b.mixed[i] += weights[g] * b.normalized[g][i];
  }
  return b;
}

}  // namespace keyloco::rl
