#pragma once

#include "keyloco/nets/params.hpp"

#include <string>
#include <vector>

namespace keyloco::nets {

// Feedforward net with ELU between layers and a linear head.
template <typename S>
struct Mlp {
  std::vector<int> w_ids, b_ids;
  int in_dim = 0, out_dim = 0;
  int hidden_count = 0;

  static Mlp build(ParamStore<S>& store, const std::string& prefix, int in,
                   const std::vector<int>& hidden, int out, Rng& rng, double head_gain = 1.0) {
    Mlp m;
    m.in_dim = in;
    m.out_dim = out;
    m.hidden_count = static_cast<int>(hidden.size());
    int prev = in;
    for (size_t i = 0; i < hidden.size(); ++i) {
      m.w_ids.push_back(store.add(prefix + ".w" + std::to_string(i), prev, hidden[i]));
      m.b_ids.push_back(store.add(prefix + ".b" + std::to_string(i), 1, hidden[i]));
      store.init_linear(m.w_ids.back(), rng);
      prev = hidden[i];
    }
    m.w_ids.push_back(store.add(prefix + ".w" + std::to_string(hidden.size()), prev, out));
    m.b_ids.push_back(store.add(prefix + ".b" + std::to_string(hidden.size()), 1, out));
    store.init_linear(m.w_ids.back(), rng, head_gain);
    return m;
  }

  // preacts, when given, receives the hidden-layer pre-activations needed by
  // input_grad().
  Var forward(Tape<S>& t, const std::vector<Var>& ps, Var x, std::vector<Var>* preacts = nullptr) const {
    Var h = x;
    for (int i = 0; i < hidden_count; ++i) {
      Var z = t.add_rowvec(t.matmul(h, ps[w_ids[i]]), ps[b_ids[i]]);
      if (preacts) preacts->push_back(z);
      h = t.elu(z);
    }
    return t.add_rowvec(t.matmul(h, ps[w_ids[hidden_count]]), ps[b_ids[hidden_count]]);
  }

  // Rows of d(output)/d(input) for a scalar-output net, assembled from
  // forward ops so downstream penalties stay first-order for the tape.
  // Exact for this architecture including the curvature of elu.
  Var input_grad(Tape<S>& t, const std::vector<Var>& ps, const std::vector<Var>& preacts) const {
    if (out_dim != 1) throw autodiff::UsageError("input_grad: scalar output required");
    if (hidden_count < 1) throw autodiff::UsageError("input_grad: needs a hidden layer");
    Var g = t.mul_rowvec(t.elu_grad_fn(preacts[hidden_count - 1]),
                         t.transpose(ps[w_ids[hidden_count]]));
    for (int i = hidden_count - 2; i >= 0; --i)
      g = t.mul(t.elu_grad_fn(preacts[i]), t.matmul(g, ps[w_ids[i + 1]], false, true));
    return t.matmul(g, ps[w_ids[0]], false, true);
  }
};

}  // namespace keyloco::nets
