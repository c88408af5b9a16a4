#pragma once

#include "keyloco/autodiff/array.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace keyloco::autodiff {

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
  int i = -1;
};

// Reverse-mode tape over dense 2-D arrays. Every op appends one node holding
// its full output, so a forward pass is replayable and backward() is a single
// reverse sweep. Shapes are checked eagerly; any non-finite output aborts with
// the offending op named, which keeps training failures diagnosable.
template <typename Scalar>
class Tape {
 public:
  using Arr = Array<Scalar>;

  enum class Op : uint8_t {
    kInput,
    kParam,
    kAdd,
    kSub,
    kMul,
    kMatmul,
    kTranspose,
    kAddRowvec,
    kMulRowvec,
    kAddScalarBcast,
    kScale,
    kAddConst,
    kExp,
    kLog,
    kSquare,
    kTanh,
    kElu,
    kEluGrad,
    kClamp,
    kMinElem,
    kSum,
    kMean,
    kSumCols,
    kSoftmaxRows,
    kMaskedFill,
    kConcatCols,
    kSliceCols,
    kLayerNorm,
    kSegmentMax,
    kAttnScores,
    kAttnApply,
  };

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kInput: return "input";
      case Op::kParam: return "param";
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kMatmul: return "matmul";
      case Op::kTranspose: return "transpose";
      case Op::kAddRowvec: return "add_rowvec";
      case Op::kMulRowvec: return "mul_rowvec";
      case Op::kAddScalarBcast: return "add_scalar_bcast";
      case Op::kScale: return "scale";
      case Op::kAddConst: return "add_const";
      case Op::kExp: return "exp";
      case Op::kLog: return "log";
      case Op::kSquare: return "square";
      case Op::kTanh: return "tanh";
      case Op::kElu: return "elu";
      case Op::kEluGrad: return "elu_grad_fn";
      case Op::kClamp: return "clamp";
      case Op::kMinElem: return "min_elem";
      case Op::kSum: return "sum";
      case Op::kMean: return "mean";
      case Op::kSumCols: return "sum_cols";
      case Op::kSoftmaxRows: return "softmax_rows";
      case Op::kMaskedFill: return "masked_fill";
      case Op::kConcatCols: return "concat_cols";
      case Op::kSliceCols: return "slice_cols";
      case Op::kLayerNorm: return "layer_norm";
      case Op::kSegmentMax: return "segment_max";
      case Op::kAttnScores: return "attn_scores";
      case Op::kAttnApply: return "attn_apply";
    }
    return "?";
  }

  // Set false to skip the per-op NaN/Inf scan (forward-only eval loops).
  bool check_finite = true;

  int size() const { return static_cast<int>(nodes_.size()); }

  const Arr& val(Var v) const { return nodes_[check_var(v)].val; }

  // Valid after backward(). Zero-shaped if the node never received gradient.
  const Arr& grad(Var v) const {
    static const Arr empty;
    int i = check_var(v);
    if (i >= static_cast<int>(grads_.size())) return empty;
    return grads_[i];
  }

  // -- leaves -- //

  Var input(Arr v) { return push(Op::kInput, -1, -1, -1, std::move(v), false); }

  Var param(Arr v) { return push(Op::kParam, -1, -1, -1, std::move(v), true); }

  // -- elementwise and broadcast -- //

  Var add(Var a, Var b) {
    const Arr &x = val(a), &y = val(b);
    require(x.same_shape(y), Op::kAdd, "shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return push(Op::kAdd, a.i, b.i, -1, std::move(out));
  }

  Var sub(Var a, Var b) {
    const Arr &x = val(a), &y = val(b);
    require(x.same_shape(y), Op::kSub, "shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return push(Op::kSub, a.i, b.i, -1, std::move(out));
  }

  Var mul(Var a, Var b) {
    const Arr &x = val(a), &y = val(b);
    require(x.same_shape(y), Op::kMul, "shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return push(Op::kMul, a.i, b.i, -1, std::move(out));
  }

  // a + v with v a 1 x cols row vector broadcast down the rows.
  Var add_rowvec(Var a, Var v) {
    const Arr &x = val(a), &y = val(v);
    require(y.rows() == 1 && y.cols() == x.cols(), Op::kAddRowvec,
            "want 1x" + std::to_string(x.cols()) + ", got " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r)
      for (int c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) + y[c];
    return push(Op::kAddRowvec, a.i, v.i, -1, std::move(out));
  }

  Var mul_rowvec(Var a, Var v) {
    const Arr &x = val(a), &y = val(v);
    require(y.rows() == 1 && y.cols() == x.cols(), Op::kMulRowvec,
            "want 1x" + std::to_string(x.cols()) + ", got " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r)
      for (int c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) * y[c];
    return push(Op::kMulRowvec, a.i, v.i, -1, std::move(out));
  }

  // a + s with s a 1x1 node broadcast to every element.
  Var add_scalar_bcast(Var a, Var s) {
    const Arr &x = val(a), &y = val(s);
    require(y.rows() == 1 && y.cols() == 1, Op::kAddScalarBcast, "s must be 1x1, got " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[0];
    return push(Op::kAddScalarBcast, a.i, s.i, -1, std::move(out));
  }

  Var scale(Var a, Scalar c) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * c;
    Var v = push(Op::kScale, a.i, -1, -1, std::move(out));
    nodes_[v.i].s0 = c;
    return v;
  }

  Var add_const(Var a, Scalar c) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + c;
    Var v = push(Op::kAddConst, a.i, -1, -1, std::move(out));
    nodes_[v.i].s0 = c;
    return v;
  }

  Var exp(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
    return push(Op::kExp, a.i, -1, -1, std::move(out));
  }

  Var log(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = std::log(x[i]);
    return push(Op::kLog, a.i, -1, -1, std::move(out));
  }

  Var square(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * x[i];
    return push(Op::kSquare, a.i, -1, -1, std::move(out));
  }

  Var tanh(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    return push(Op::kTanh, a.i, -1, -1, std::move(out));
  }

  Var elu(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i)
      out[i] = x[i] > Scalar(0) ? x[i] : std::exp(x[i]) - Scalar(1);
    return push(Op::kElu, a.i, -1, -1, std::move(out));
  }

  // elu'(x) as a differentiable node. Lets a discriminator input-gradient be
  // built with forward ops only, so a penalty on it needs no second backward.
  Var elu_grad_fn(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i)
      out[i] = x[i] > Scalar(0) ? Scalar(1) : std::exp(x[i]);
    return push(Op::kEluGrad, a.i, -1, -1, std::move(out));
  }

  Var clamp(Var a, Scalar lo, Scalar hi) {
    require(lo <= hi, Op::kClamp, "lo > hi");
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = std::min(std::max(x[i], lo), hi);
    Var v = push(Op::kClamp, a.i, -1, -1, std::move(out));
    nodes_[v.i].s0 = lo;
    nodes_[v.i].s1 = hi;
    return v;
  }

  // Elementwise min; ties route gradient to the first argument.
  Var min_elem(Var a, Var b) {
    const Arr &x = val(a), &y = val(b);
    require(x.same_shape(y), Op::kMinElem, "shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] <= y[i] ? x[i] : y[i];
    return push(Op::kMinElem, a.i, b.i, -1, std::move(out));
  }

  // -- linear algebra -- //

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Arr &x = val(a), &y = val(b);
    int m = ta ? x.cols() : x.rows();
    int k = ta ? x.rows() : x.cols();
    int k2 = tb ? y.cols() : y.rows();
    int n = tb ? y.rows() : y.cols();
    require(k == k2, Op::kMatmul,
            "inner dims " + x.shape_str() + (ta ? "^T" : "") + " * " + y.shape_str() + (tb ? "^T" : ""));
    Arr out(m, n);
    auto xo = x.mat();
    auto yo = y.mat();
    auto om = out.mat();
    if (!ta && !tb) om.noalias() = xo * yo;
    else if (ta && !tb) om.noalias() = xo.transpose() * yo;
    else if (!ta && tb) om.noalias() = xo * yo.transpose();
    else om.noalias() = xo.transpose() * yo.transpose();
    Var v = push(Op::kMatmul, a.i, b.i, -1, std::move(out));
    nodes_[v.i].i0 = ta ? 1 : 0;
    nodes_[v.i].i1 = tb ? 1 : 0;
    return v;
  }

  Var transpose(Var a) {
    const Arr& x = val(a);
    Arr out(x.cols(), x.rows());
    out.mat().noalias() = x.mat().transpose();
    return push(Op::kTranspose, a.i, -1, -1, std::move(out));
  }

  // -- reductions -- //

  Var sum(Var a) {
    const Arr& x = val(a);
    Arr out(1, 1);
    Scalar s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i];
    out[0] = s;
    return push(Op::kSum, a.i, -1, -1, std::move(out));
  }

  Var mean(Var a) {
    const Arr& x = val(a);
    require(x.size() > 0, Op::kMean, "empty input");
    Arr out(1, 1);
    Scalar s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i];
    out[0] = s / static_cast<Scalar>(x.size());
    return push(Op::kMean, a.i, -1, -1, std::move(out));
  }

  // Row sums: [r, c] -> [r, 1].
  Var sum_cols(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), 1);
    for (int r = 0; r < x.rows(); ++r) {
      Scalar s = 0;
      for (int c = 0; c < x.cols(); ++c) s += x.at(r, c);
      out[r] = s;
    }
    return push(Op::kSumCols, a.i, -1, -1, std::move(out));
  }

  // -- structured ops -- //

  Var softmax_rows(Var a) {
    const Arr& x = val(a);
    Arr out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
      Scalar mx = x.at(r, 0);
      for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
      Scalar z = 0;
      for (int c = 0; c < x.cols(); ++c) {
        Scalar e = std::exp(x.at(r, c) - mx);
        out.at(r, c) = e;
        z += e;
      }
      for (int c = 0; c < x.cols(); ++c) out.at(r, c) /= z;
    }
    return push(Op::kSoftmaxRows, a.i, -1, -1, std::move(out));
  }

  // out[i] = mask[i] != 0 ? fill : a[i]. Filled positions pass no gradient.
  Var masked_fill(Var a, const Arr& mask, Scalar fill) {
    const Arr& x = val(a);
    require(x.same_shape(mask), Op::kMaskedFill,
            "mask shape " + mask.shape_str() + " vs " + x.shape_str());
    Arr out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out[i] = mask[i] != Scalar(0) ? fill : x[i];
    Var v = push(Op::kMaskedFill, a.i, -1, -1, std::move(out));
    nodes_[v.i].aux = mask;
    nodes_[v.i].s0 = fill;
    return v;
  }

  Var concat_cols(Var a, Var b) {
    const Arr &x = val(a), &y = val(b);
    require(x.rows() == y.rows(), Op::kConcatCols,
            "row mismatch " + x.shape_str() + " vs " + y.shape_str());
    Arr out(x.rows(), x.cols() + y.cols());
    for (int r = 0; r < x.rows(); ++r) {
      for (int c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c);
      for (int c = 0; c < y.cols(); ++c) out.at(r, x.cols() + c) = y.at(r, c);
    }
    Var v = push(Op::kConcatCols, a.i, b.i, -1, std::move(out));
    nodes_[v.i].i0 = x.cols();
    return v;
  }

  // Columns [c0, c1).
  Var slice_cols(Var a, int c0, int c1) {
    const Arr& x = val(a);
    require(0 <= c0 && c0 < c1 && c1 <= x.cols(), Op::kSliceCols,
            "range [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + x.shape_str());
    Arr out(x.rows(), c1 - c0);
    for (int r = 0; r < x.rows(); ++r)
      for (int c = c0; c < c1; ++c) out.at(r, c - c0) = x.at(r, c);
    Var v = push(Op::kSliceCols, a.i, -1, -1, std::move(out));
    nodes_[v.i].i0 = c0;
    nodes_[v.i].i1 = c1;
    return v;
  }

  // Per-row layer norm with learnable affine. gamma, beta are 1 x cols.
  Var layer_norm(Var a, Var gamma, Var beta, Scalar eps = Scalar(1e-5)) {
    const Arr &x = val(a), &g = val(gamma), &b = val(beta);
    require(g.rows() == 1 && g.cols() == x.cols(), Op::kLayerNorm, "gamma shape " + g.shape_str());
    require(b.rows() == 1 && b.cols() == x.cols(), Op::kLayerNorm, "beta shape " + b.shape_str());
    require(x.cols() >= 1, Op::kLayerNorm, "empty rows");
    int R = x.rows(), C = x.cols();
    Arr out(R, C), xhat(R, C), inv_std(R, 1);
    for (int r = 0; r < R; ++r) {
      Scalar mu = 0;
      for (int c = 0; c < C; ++c) mu += x.at(r, c);
      mu /= static_cast<Scalar>(C);
      Scalar var = 0;
      for (int c = 0; c < C; ++c) {
        Scalar d = x.at(r, c) - mu;
        var += d * d;
      }
      var /= static_cast<Scalar>(C);
      Scalar inv = Scalar(1) / std::sqrt(var + eps);
      inv_std[r] = inv;
      for (int c = 0; c < C; ++c) {
        Scalar xh = (x.at(r, c) - mu) * inv;
        xhat.at(r, c) = xh;
        out.at(r, c) = xh * g[c] + b[c];
      }
    }
    Var v = push(Op::kLayerNorm, a.i, gamma.i, beta.i, std::move(out));
    nodes_[v.i].aux = std::move(xhat);
    nodes_[v.i].aux2 = std::move(inv_std);
    return v;
  }

  // Column-wise max over each length-seg_len row segment, restricted to rows
  // with keep != 0. Every segment needs at least one kept row. Gradient goes
  // to the first attaining row.
  Var segment_max(Var a, int seg_len, const std::vector<uint8_t>& keep) {
    const Arr& x = val(a);
    require(seg_len > 0 && x.rows() % seg_len == 0, Op::kSegmentMax,
            "rows " + std::to_string(x.rows()) + " not divisible by " + std::to_string(seg_len));
    require(static_cast<int>(keep.size()) == x.rows(), Op::kSegmentMax, "keep size mismatch");
    int S = x.rows() / seg_len, C = x.cols();
    Arr out(S, C);
    std::vector<int> arg(static_cast<size_t>(S) * C, -1);
    for (int s = 0; s < S; ++s) {
      bool any = false;
      for (int j = 0; j < seg_len; ++j) {
        int r = s * seg_len + j;
        if (!keep[r]) continue;
        any = true;
        for (int c = 0; c < C; ++c) {
          Scalar v = x.at(r, c);
          int& ai = arg[static_cast<size_t>(s) * C + c];
          if (ai < 0 || v > out.at(s, c)) {
            out.at(s, c) = v;
            ai = r;
          }
        }
      }
      require(any, Op::kSegmentMax, "segment " + std::to_string(s) + " has no kept rows");
    }
    Var v = push(Op::kSegmentMax, a.i, -1, -1, std::move(out));
    nodes_[v.i].i0 = seg_len;
    nodes_[v.i].idx = std::move(arg);
    return v;
  }

  // Scaled dot-product scores per row segment: for each sequence s of length
  // seg_len, out rows [s*L, (s+1)*L) hold Q_s K_s^T / sqrt(d). q, k: [S*L, d].
  Var attn_scores(Var q, Var k, int seg_len) {
    const Arr &qm = val(q), &km = val(k);
    require(qm.same_shape(km), Op::kAttnScores, "q/k shape mismatch");
    require(seg_len > 0 && qm.rows() % seg_len == 0, Op::kAttnScores, "rows not divisible by seg_len");
    int S = qm.rows() / seg_len, d = qm.cols();
    Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
    Arr out(qm.rows(), seg_len);
    auto Q = qm.mat();
    auto K = km.mat();
    auto O = out.mat();
    for (int s = 0; s < S; ++s) {
      O.block(s * seg_len, 0, seg_len, seg_len).noalias() =
          Q.block(s * seg_len, 0, seg_len, d) * K.block(s * seg_len, 0, seg_len, d).transpose() * inv;
    }
    Var v = push(Op::kAttnScores, q.i, k.i, -1, std::move(out));
    nodes_[v.i].i0 = seg_len;
    return v;
  }

  // Per-segment P_s V_s with P: [S*L, L], v: [S*L, d].
  Var attn_apply(Var p, Var vv, int seg_len) {
    const Arr &pm = val(p), &vm = val(vv);
    require(seg_len > 0 && pm.rows() % seg_len == 0, Op::kAttnApply, "rows not divisible by seg_len");
    require(pm.cols() == seg_len, Op::kAttnApply, "p cols != seg_len");
    require(vm.rows() == pm.rows(), Op::kAttnApply, "p/v row mismatch");
    int S = pm.rows() / seg_len, d = vm.cols();
    Arr out(pm.rows(), d);
    auto P = pm.mat();
    auto V = vm.mat();
    auto O = out.mat();
    for (int s = 0; s < S; ++s) {
      O.block(s * seg_len, 0, seg_len, d).noalias() =
          P.block(s * seg_len, 0, seg_len, seg_len) * V.block(s * seg_len, 0, seg_len, d);
    }
    Var v = push(Op::kAttnApply, p.i, vv.i, -1, std::move(out));
    nodes_[v.i].i0 = seg_len;
    return v;
  }

  // -- backward -- //

  // Reverse sweep from a scalar root. Gradients of all reachable nodes with
  // requires_grad are available via grad() afterwards.
  void backward(Var root) {
    int ri = check_var(root);
    const Node& rn = nodes_[ri];
    if (rn.val.rows() != 1 || rn.val.cols() != 1)
      throw UsageError("backward: root must be 1x1, got " + rn.val.shape_str());
    grads_.assign(nodes_.size(), Arr());
    // params always end up with a well-formed gradient, zero if off-path
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::kParam) ensure_grad(static_cast<int>(i));
    if (!rn.rg) return;  // no parameters on the path
    ensure_grad(ri);
    grads_[ri][0] = Scalar(1);
    for (int i = ri; i >= 0; --i) {
      const Node& n = nodes_[i];
      if (!n.rg || grads_[i].size() == 0) continue;
      backprop(i);
    }
  }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    int i0 = 0, i1 = 0;
    Scalar s0 = 0, s1 = 0;
    bool rg = false;
    Arr val;
    Arr aux;
    Arr aux2;
    std::vector<int> idx;
  };

  std::vector<Node> nodes_;
  std::vector<Arr> grads_;

  int check_var(Var v) const {
    if (v.i < 0 || v.i >= static_cast<int>(nodes_.size()))
      throw UsageError("Var index " + std::to_string(v.i) + " not on this tape");
    return v.i;
  }

  void require(bool ok, Op op, const std::string& msg) const {
    if (!ok) throw ShapeError(std::string(op_name(op)) + ": " + msg);
  }

  Var push(Op op, int a, int b, int c, Arr val) {
    bool rg = (a >= 0 && nodes_[a].rg) || (b >= 0 && nodes_[b].rg) || (c >= 0 && nodes_[c].rg);
    return push(op, a, b, c, std::move(val), rg);
  }

  Var push(Op op, int a, int b, int c, Arr val, bool rg) {
    if (check_finite && !val.all_finite()) {
      throw NumericError(std::string("non-finite value from op '") + op_name(op) + "' (node " +
                         std::to_string(nodes_.size()) + ")");
    }
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.rg = rg;
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void ensure_grad(int i) {
    if (grads_[i].size() == 0) grads_[i] = Arr::zeros(nodes_[i].val.rows(), nodes_[i].val.cols());
  }

  bool wants(int i) const { return i >= 0 && nodes_[i].rg; }

  Arr* gslot(int i) {
    if (!wants(i)) return nullptr;
    ensure_grad(i);
    return &grads_[i];
  }

  void backprop(int i) {
    Node& n = nodes_[i];
    const Arr& g = grads_[i];
    Arr* ga = gslot(n.a);
    Arr* gb = gslot(n.b);
    Arr* gc = gslot(n.c);
    const Arr* av = n.a >= 0 ? &nodes_[n.a].val : nullptr;
    const Arr* bv = n.b >= 0 ? &nodes_[n.b].val : nullptr;

    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;

      case Op::kAdd:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        if (gb) for (size_t k = 0; k < g.size(); ++k) (*gb)[k] += g[k];
        break;

      case Op::kSub:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        if (gb) for (size_t k = 0; k < g.size(); ++k) (*gb)[k] -= g[k];
        break;

      case Op::kMul:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * (*bv)[k];
        if (gb) for (size_t k = 0; k < g.size(); ++k) (*gb)[k] += g[k] * (*av)[k];
        break;

      case Op::kMatmul: {
        bool ta = n.i0 != 0, tb = n.i1 != 0;
        auto G = g.mat();
        auto A = av->mat();
        auto B = bv->mat();
        if (ga) {
          auto GA = ga->mat();
          if (!ta && !tb) GA.noalias() += G * B.transpose();
          else if (ta && !tb) GA.noalias() += B * G.transpose();
          else if (!ta && tb) GA.noalias() += G * B;
          else GA.noalias() += B.transpose() * G.transpose();
        }
        if (gb) {
          auto GB = gb->mat();
          if (!ta && !tb) GB.noalias() += A.transpose() * G;
          else if (ta && !tb) GB.noalias() += A * G;
          else if (!ta && tb) GB.noalias() += G.transpose() * A;
          else GB.noalias() += G.transpose() * A.transpose();
        }
        break;
      }

      case Op::kTranspose:
        if (ga) ga->mat() += g.mat().transpose();
        break;

      case Op::kAddRowvec:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        if (gb) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) (*gb)[c] += g.at(r, c);
        }
        break;

      case Op::kMulRowvec:
        if (ga) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) ga->at(r, c) += g.at(r, c) * (*bv)[c];
        }
        if (gb) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) (*gb)[c] += g.at(r, c) * av->at(r, c);
        }
        break;

      case Op::kAddScalarBcast:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        if (gb) {
          Scalar s = 0;
          for (size_t k = 0; k < g.size(); ++k) s += g[k];
          (*gb)[0] += s;
        }
        break;

      case Op::kScale:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * n.s0;
        break;

      case Op::kAddConst:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        break;

      case Op::kExp:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * n.val[k];
        break;

      case Op::kLog:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] / (*av)[k];
        break;

      case Op::kSquare:
        if (ga) for (size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * Scalar(2) * (*av)[k];
        break;

      case Op::kTanh:
        if (ga)
          for (size_t k = 0; k < g.size(); ++k)
            (*ga)[k] += g[k] * (Scalar(1) - n.val[k] * n.val[k]);
        break;

      case Op::kElu:
        // For x <= 0, elu = e^x - 1 so elu' = val + 1.
        if (ga)
          for (size_t k = 0; k < g.size(); ++k)
            (*ga)[k] += g[k] * ((*av)[k] > Scalar(0) ? Scalar(1) : n.val[k] + Scalar(1));
        break;

      case Op::kEluGrad:
        if (ga)
          for (size_t k = 0; k < g.size(); ++k)
            (*ga)[k] += (*av)[k] > Scalar(0) ? Scalar(0) : g[k] * n.val[k];
        break;

      case Op::kClamp:
        if (ga)
          for (size_t k = 0; k < g.size(); ++k)
            if ((*av)[k] >= n.s0 && (*av)[k] <= n.s1) (*ga)[k] += g[k];
        break;

      case Op::kMinElem:
        for (size_t k = 0; k < g.size(); ++k) {
          if ((*av)[k] <= (*bv)[k]) {
            if (ga) (*ga)[k] += g[k];
          } else if (gb) {
            (*gb)[k] += g[k];
          }
        }
        break;

      case Op::kSum:
        if (ga) for (size_t k = 0; k < ga->size(); ++k) (*ga)[k] += g[0];
        break;

      case Op::kMean:
        if (ga) {
          Scalar s = g[0] / static_cast<Scalar>(ga->size());
          for (size_t k = 0; k < ga->size(); ++k) (*ga)[k] += s;
        }
        break;

      case Op::kSumCols:
        if (ga) {
          for (int r = 0; r < ga->rows(); ++r)
            for (int c = 0; c < ga->cols(); ++c) ga->at(r, c) += g[r];
        }
        break;

      case Op::kSoftmaxRows:
        if (ga) {
          for (int r = 0; r < g.rows(); ++r) {
            Scalar dot = 0;
            for (int c = 0; c < g.cols(); ++c) dot += g.at(r, c) * n.val.at(r, c);
            for (int c = 0; c < g.cols(); ++c)
              ga->at(r, c) += n.val.at(r, c) * (g.at(r, c) - dot);
          }
        }
        break;

      case Op::kMaskedFill:
        if (ga)
          for (size_t k = 0; k < g.size(); ++k)
            if (n.aux[k] == Scalar(0)) (*ga)[k] += g[k];
        break;

      case Op::kConcatCols: {
        int ca = n.i0;
        if (ga) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < ca; ++c) ga->at(r, c) += g.at(r, c);
        }
        if (gb) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < gb->cols(); ++c) gb->at(r, c) += g.at(r, ca + c);
        }
        break;
      }

      case Op::kSliceCols:
        if (ga) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) ga->at(r, n.i0 + c) += g.at(r, c);
        }
        break;

      case Op::kLayerNorm: {
        const Arr& xhat = n.aux;
        const Arr& inv_std = n.aux2;
        const Arr& gamma = nodes_[n.b].val;
        int R = g.rows(), C = g.cols();
        if (gb || gc) {
          for (int r = 0; r < R; ++r) {
            for (int c = 0; c < C; ++c) {
              if (gb) (*gb)[c] += g.at(r, c) * xhat.at(r, c);
              if (gc) (*gc)[c] += g.at(r, c);
            }
          }
        }
        if (ga) {
          for (int r = 0; r < R; ++r) {
            Scalar m1 = 0, m2 = 0;
            for (int c = 0; c < C; ++c) {
              Scalar gh = g.at(r, c) * gamma[c];
              m1 += gh;
              m2 += gh * xhat.at(r, c);
            }
            m1 /= static_cast<Scalar>(C);
            m2 /= static_cast<Scalar>(C);
            for (int c = 0; c < C; ++c) {
              Scalar gh = g.at(r, c) * gamma[c];
              ga->at(r, c) += inv_std[r] * (gh - m1 - xhat.at(r, c) * m2);
            }
          }
        }
        break;
      }

      case Op::kSegmentMax:
        if (ga) {
          int C = g.cols();
          for (int s = 0; s < g.rows(); ++s)
            for (int c = 0; c < C; ++c)
              ga->at(n.idx[static_cast<size_t>(s) * C + c], c) += g.at(s, c);
        }
        break;

      case Op::kAttnScores: {
        int L = n.i0;
        int d = av->cols();
        int S = av->rows() / L;
        Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
        auto G = g.mat();
        auto Q = av->mat();
        auto K = bv->mat();
        for (int s = 0; s < S; ++s) {
          auto Gs = G.block(s * L, 0, L, L);
          if (ga) ga->mat().block(s * L, 0, L, d).noalias() += Gs * K.block(s * L, 0, L, d) * inv;
          if (gb)
            gb->mat().block(s * L, 0, L, d).noalias() +=
                Gs.transpose() * Q.block(s * L, 0, L, d) * inv;
        }
        break;
      }

      case Op::kAttnApply: {
        int L = n.i0;
        int d = bv->cols();
        int S = av->rows() / L;
        auto G = g.mat();
        auto P = av->mat();
        auto V = bv->mat();
        for (int s = 0; s < S; ++s) {
          auto Gs = G.block(s * L, 0, L, d);
          if (ga)
            ga->mat().block(s * L, 0, L, L).noalias() += Gs * V.block(s * L, 0, L, d).transpose();
          if (gb)
            gb->mat().block(s * L, 0, L, d).noalias() +=
                P.block(s * L, 0, L, L).transpose() * Gs;
        }
        break;
      }
    }
  }
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

}  // namespace keyloco::autodiff
