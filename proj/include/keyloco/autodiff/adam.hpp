#pragma once

#include "keyloco/autodiff/array.hpp"

#include <cmath>
#include <vector>

namespace keyloco::autodiff {

// Adam with bias correction. Slot layout is fixed at first step(); the same
// parameter list must be passed in the same order every time.
template <typename Scalar>
class Adam {
 public:
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);

  Adam() = default;
  Adam(Scalar b1, Scalar b2, Scalar e) : beta1(b1), beta2(b2), eps(e) {}

  int64_t steps() const { return t_; }

  void step(const std::vector<Array<Scalar>*>& params,
            const std::vector<const Array<Scalar>*>& grads, Scalar lr) {
    if (params.size() != grads.size()) throw UsageError("adam: params/grads size mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (auto* p : params) {
        m_.push_back(Array<Scalar>::zeros(p->rows(), p->cols()));
        v_.push_back(Array<Scalar>::zeros(p->rows(), p->cols()));
      }
    }
    if (params.size() != m_.size()) throw UsageError("adam: parameter count changed");
    ++t_;
    Scalar c1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(t_));
    Scalar c2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
      Array<Scalar>& p = *params[k];
      const Array<Scalar>& g = *grads[k];
      if (!p.same_shape(g)) throw UsageError("adam: grad shape mismatch at slot " + std::to_string(k));
      Array<Scalar>& m = m_[k];
      Array<Scalar>& v = v_[k];
      for (size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1 * m[i] + (Scalar(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (Scalar(1) - beta2) * g[i] * g[i];
        Scalar mhat = m[i] / c1;
        Scalar vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  // Optimizer state for checkpointing: m then v, in slot order.
  std::vector<const Array<Scalar>*> state() const {
    std::vector<const Array<Scalar>*> out;
    out.reserve(m_.size() * 2);
    for (const auto& a : m_) out.push_back(&a);
    for (const auto& a : v_) out.push_back(&a);
    return out;
  }

  void restore(const std::vector<Array<Scalar>>& state, int64_t t) {
    if (state.size() % 2 != 0) throw UsageError("adam: bad state size");
    size_t n = state.size() / 2;
    m_.assign(state.begin(), state.begin() + n);
    v_.assign(state.begin() + n, state.end());
    t_ = t;
  }

 private:
  std::vector<Array<Scalar>> m_;
  std::vector<Array<Scalar>> v_;
  int64_t t_ = 0;
};

}  // namespace keyloco::autodiff
