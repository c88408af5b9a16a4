#pragma once

#include "keyloco/nets/encoder.hpp"
#include "keyloco/nets/mlp.hpp"

#include <string>
#include <vector>

namespace keyloco::nets {

// One value network. Default form runs its own keyframe encoder over the
// full token sequence; the pooled form consumes an externally supplied
// feature vector instead (config switch, no encoder parameters).
template <typename S>
struct Critic {
  ParamStore<S> store;
  Encoder<S> enc;
  Mlp<S> mlp;
  bool own_encoder = true;

  static Critic build(const EncoderConfig& ec, const std::vector<int>& hidden, uint64_t seed,
                      bool own_encoder = true, int pooled_dim = 0) {
    Critic c;
    c.own_encoder = own_encoder;
    Rng rng = Rng::derive(seed, 0, 0x637269); // "cri"
    if (own_encoder) {
      c.enc = Encoder<S>::build(c.store, "enc", ec, rng);
      c.mlp = Mlp<S>::build(c.store, "value", ec.model_dim, hidden, 1, rng);
    } else {
      c.mlp = Mlp<S>::build(c.store, "value", pooled_dim, hidden, 1, rng);
    }
    return c;
  }

  // Token form; requires own_encoder.
  Var forward(Tape<S>& t, const std::vector<Var>& ps, Var tokens,
              const std::vector<uint8_t>& masked, int T) const {
    if (!own_encoder) throw autodiff::UsageError("critic: configured for pooled input");
    return mlp.forward(t, ps, enc.forward(t, ps, tokens, masked, T));
  }

  // Pooled form.
  Var forward_pooled(Tape<S>& t, const std::vector<Var>& ps, Var pooled) const {
    if (own_encoder) throw autodiff::UsageError("critic: configured for token input");
    return mlp.forward(t, ps, pooled);
  }
};

// Independent critics, one per reward group; no parameter sharing anywhere.
template <typename S>
struct CriticSet {
  std::vector<Critic<S>> critics;

  static CriticSet build(int n_groups, const EncoderConfig& ec, const std::vector<int>& hidden,
                         uint64_t seed, bool own_encoder = true, int pooled_dim = 0) {
    CriticSet cs;
    cs.critics.reserve(n_groups);
    for (int i = 0; i < n_groups; ++i)
      cs.critics.push_back(
          Critic<S>::build(ec, hidden, Rng::mix(seed ^ (0xc0ffee + i)), own_encoder, pooled_dim));
    return cs;
  }

  int size() const { return static_cast<int>(critics.size()); }
};

}  // namespace keyloco::nets
