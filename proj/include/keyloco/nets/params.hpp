#pragma once

#include "keyloco/autodiff/tape.hpp"
#include "keyloco/util/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace keyloco::nets {

using autodiff::Array;
using autodiff::Tape;
using autodiff::Var;

// Named parameter arrays for one network. Entry order is creation order and
// is the serialization order for checkpoints; attach() registers every entry
// on a tape and the returned Vars are indexed by entry id.
template <typename S>
class ParamStore {
 public:
  int add(std::string name, int rows, int cols) {
    names_.push_back(std::move(name));
    values_.push_back(Array<S>::zeros(rows, cols));
    return static_cast<int>(values_.size()) - 1;
  }

  int count() const { return static_cast<int>(values_.size()); }
  const std::string& name(int id) const { return names_[id]; }
  Array<S>& value(int id) { return values_[id]; }
  const Array<S>& value(int id) const { return values_[id]; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  std::vector<Var> attach(Tape<S>& t) const {
    std::vector<Var> vs;
    vs.reserve(values_.size());
    for (const auto& v : values_) vs.push_back(t.param(v));
    return vs;
  }

  // Gradient pointers in entry order, for the optimizer. Valid until the
  // tape is destroyed.
  std::vector<const Array<S>*> grads(const Tape<S>& t, const std::vector<Var>& vs) const {
    std::vector<const Array<S>*> gs;
    gs.reserve(vs.size());
    for (Var v : vs) gs.push_back(&t.grad(v));
    return gs;
  }

  std::vector<Array<S>*> values() {
    std::vector<Array<S>*> ps;
    ps.reserve(values_.size());
    for (auto& v : values_) ps.push_back(&v);
    return ps;
  }

  // He-style uniform fan-in init for a linear layer; bias stays zero.
  void init_linear(int w_id, Rng& rng, double gain = 1.0) {
    Array<S>& w = values_[w_id];
    double bound = gain * std::sqrt(6.0 / static_cast<double>(w.rows()));
    for (auto& x : w.data) x = static_cast<S>(rng.uniform(-bound, bound));
  }

  void fill(int id, S v) { values_[id].fill(v); }

 private:
  std::vector<std::string> names_;
  std::vector<Array<S>> values_;
};

}  // namespace keyloco::nets
