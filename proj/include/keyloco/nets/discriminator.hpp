#pragma once

#include "keyloco/nets/mlp.hpp"

#include <string>
#include <vector>

namespace keyloco::nets {

// AMP-style discriminator: MLP from transition-pair features to a raw score.
template <typename S>
struct Discriminator {
  ParamStore<S> store;
  Mlp<S> mlp;
  int feature_dim = 0;

  static Discriminator build(int feature_dim, const std::vector<int>& hidden, uint64_t seed) {
    Discriminator d;
    d.feature_dim = feature_dim;
    Rng rng = Rng::derive(seed, 0, 0x646973); // "dis"
    d.mlp = Mlp<S>::build(d.store, "disc", feature_dim, hidden, 1, rng);
    return d;
  }

  Var forward(Tape<S>& t, const std::vector<Var>& ps, Var x,
              std::vector<Var>* preacts = nullptr) const {
    return mlp.forward(t, ps, x, preacts);
  }

  // E[ ||dD/dx||^2 ] over the batch, built from forward ops (see Mlp).
  Var grad_penalty(Tape<S>& t, const std::vector<Var>& ps, const std::vector<Var>& preacts) const {
    Var gx = mlp.input_grad(t, ps, preacts);
    return t.mean(t.sum_cols(t.square(gx)));
  }
};

}  // namespace keyloco::nets
