#pragma once

#include "keyloco/nets/encoder.hpp"
#include "keyloco/nets/mlp.hpp"
#include "keyloco/util/angles.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace keyloco::nets {

// Gaussian policy: keyframe encoder -> MLP trunk -> action mean, plus a
// state-independent learnable log-std vector (init std 1).
template <typename S>
struct Policy {
  ParamStore<S> store;
  Encoder<S> enc;
  Mlp<S> trunk;
  int log_std_id = -1;
  int action_dim = 0;

  static Policy build(const EncoderConfig& ec, const std::vector<int>& trunk_hidden,
                      int action_dim, uint64_t seed) {
    Policy p;
    p.action_dim = action_dim;
    Rng rng = Rng::derive(seed, 0, 0x706f6c); // "pol"
    p.enc = Encoder<S>::build(p.store, "enc", ec, rng);
    p.trunk = Mlp<S>::build(p.store, "trunk", ec.model_dim, trunk_hidden, action_dim, rng, 0.1);
    p.log_std_id = p.store.add("log_std", 1, action_dim);
    return p;
  }

  struct Out {
    Var mean;     // [B, action_dim]
    Var log_std;  // [1, action_dim]
  };

  Out forward(Tape<S>& t, const std::vector<Var>& ps, Var tokens,
              const std::vector<uint8_t>& masked, int T) const {
    Var pooled = enc.forward(t, ps, tokens, masked, T);
    return Out{trunk.forward(t, ps, pooled), ps[log_std_id]};
  }
};

// log N(actions | mean, diag exp(log_std)^2) per row -> [B, 1]
template <typename S>
Var gaussian_log_prob(Tape<S>& t, Var mean, Var log_std, Var actions) {
  const int dim = t.val(mean).cols();
  Var inv_std = t.exp(t.scale(log_std, S(-1)));
  Var z = t.mul_rowvec(t.sub(actions, mean), inv_std);
  Var q = t.scale(t.sum_cols(t.square(z)), S(-0.5));
  Var lp = t.add_scalar_bcast(q, t.scale(t.sum(log_std), S(-1)));
  return t.add_const(lp, S(-0.5 * dim * std::log(2.0 * kPi)));
}

// Entropy of the diagonal Gaussian; state-independent std makes this a
// single scalar for the whole batch.
template <typename S>
Var gaussian_entropy(Tape<S>& t, Var log_std) {
  const int dim = t.val(log_std).cols();
  return t.add_const(t.sum(log_std), S(0.5 * dim * (1.0 + std::log(2.0 * kPi))));
}

// Mean closed-form KL(old || new) between diagonal Gaussians, plain arrays.
template <typename S>
double gaussian_kl(const autodiff::Array<S>& mu_old, const autodiff::Array<S>& log_std_old,
                   const autodiff::Array<S>& mu_new, const autodiff::Array<S>& log_std_new) {
  const int B = mu_old.rows(), A = mu_old.cols();
  double total = 0.0;
  for (int r = 0; r < B; ++r) {
    for (int c = 0; c < A; ++c) {
      double lo = static_cast<double>(log_std_old[c]);
      double ln = static_cast<double>(log_std_new[c]);
      double so2 = std::exp(2.0 * lo);
      double sn2 = std::exp(2.0 * ln);
      double dm = static_cast<double>(mu_old.at(r, c)) - static_cast<double>(mu_new.at(r, c));
      total += ln - lo + (so2 + dm * dm) / (2.0 * sn2) - 0.5;
    }
  }
  return total / static_cast<double>(B);
}

}  // namespace keyloco::nets
