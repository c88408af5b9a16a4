#pragma once

#include "keyloco/nets/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace keyloco::nets {

struct EncoderConfig {
  int num_layers = 2;
  int num_heads = 1;
  int model_dim = 64;
  int ff_dim = 512;
  int token_dim = 0;
};

// Sequence-to-token transformer: embed, pre-norm self-attention blocks with
// key masking, then a max-pool over the unmasked rows of each sequence.
// Token sequences are packed [B*T, token_dim] with a fixed row count T per
// sequence; `masked` marks rows to ignore (key masking + pool exclusion).
// With num_layers = 0 this reduces to per-token embedding + max-pool.
template <typename S>
struct Encoder {
  EncoderConfig cfg;
  int we = -1, be = -1;
  struct Block {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b, wf1, bf1, wf2, bf2;
  };
  std::vector<Block> blocks;

  static Encoder build(ParamStore<S>& store, const std::string& prefix, const EncoderConfig& cfg,
                       Rng& rng) {
    if (cfg.model_dim % cfg.num_heads != 0)
      throw autodiff::UsageError("encoder: model_dim not divisible by num_heads");
    Encoder e;
    e.cfg = cfg;
    int d = cfg.model_dim;
    e.we = store.add(prefix + ".embed.w", cfg.token_dim, d);
    e.be = store.add(prefix + ".embed.b", 1, d);
    store.init_linear(e.we, rng);
    for (int l = 0; l < cfg.num_layers; ++l) {
      std::string p = prefix + ".block" + std::to_string(l);
      Block b;
      b.ln1_g = store.add(p + ".ln1.g", 1, d);
      b.ln1_b = store.add(p + ".ln1.b", 1, d);
      b.wq = store.add(p + ".attn.wq", d, d);
      b.bq = store.add(p + ".attn.bq", 1, d);
      b.wk = store.add(p + ".attn.wk", d, d);
      b.bk = store.add(p + ".attn.bk", 1, d);
      b.wv = store.add(p + ".attn.wv", d, d);
      b.bv = store.add(p + ".attn.bv", 1, d);
      b.wo = store.add(p + ".attn.wo", d, d);
      b.bo = store.add(p + ".attn.bo", 1, d);
      b.ln2_g = store.add(p + ".ln2.g", 1, d);
      b.ln2_b = store.add(p + ".ln2.b", 1, d);
      b.wf1 = store.add(p + ".ff.w1", d, cfg.ff_dim);
      b.bf1 = store.add(p + ".ff.b1", 1, cfg.ff_dim);
      b.wf2 = store.add(p + ".ff.w2", cfg.ff_dim, d);
      b.bf2 = store.add(p + ".ff.b2", 1, d);
      store.fill(b.ln1_g, S(1));
      store.fill(b.ln2_g, S(1));
      store.init_linear(b.wq, rng);
      store.init_linear(b.wk, rng);
      store.init_linear(b.wv, rng);
      store.init_linear(b.wo, rng);
      store.init_linear(b.wf1, rng);
      store.init_linear(b.wf2, rng);
      e.blocks.push_back(b);
    }
    return e;
  }

  // tokens: [B*T, token_dim]; masked: length B*T, nonzero = ignore row.
  // Returns pooled features [B, model_dim].
  Var forward(Tape<S>& t, const std::vector<Var>& ps, Var tokens,
              const std::vector<uint8_t>& masked, int T) const {
    const int rows = t.val(tokens).rows();
    if (rows % T != 0 || static_cast<int>(masked.size()) != rows)
      throw autodiff::UsageError("encoder: bad token packing");
    // key-mask matrix, identical for every query row of a sequence
    Array<S> key_mask(rows, T);
    std::vector<uint8_t> keep(masked.size());
    for (int r = 0; r < rows; ++r) {
      keep[r] = masked[r] ? 0 : 1;
      int base = (r / T) * T;
      for (int j = 0; j < T; ++j) key_mask.at(r, j) = masked[base + j] ? S(1) : S(0);
    }

    Var h = t.add_rowvec(t.matmul(tokens, ps[we]), ps[be]);
    const int d = cfg.model_dim;
    const int hd = d / cfg.num_heads;
    for (const Block& b : blocks) {
      Var a = t.layer_norm(h, ps[b.ln1_g], ps[b.ln1_b]);
      Var q = t.add_rowvec(t.matmul(a, ps[b.wq]), ps[b.bq]);
      Var k = t.add_rowvec(t.matmul(a, ps[b.wk]), ps[b.bk]);
      Var v = t.add_rowvec(t.matmul(a, ps[b.wv]), ps[b.bv]);
      Var att;
      for (int hi = 0; hi < cfg.num_heads; ++hi) {
        Var qh = cfg.num_heads == 1 ? q : t.slice_cols(q, hi * hd, (hi + 1) * hd);
        Var kh = cfg.num_heads == 1 ? k : t.slice_cols(k, hi * hd, (hi + 1) * hd);
        Var vh = cfg.num_heads == 1 ? v : t.slice_cols(v, hi * hd, (hi + 1) * hd);
        Var sc = t.masked_fill(t.attn_scores(qh, kh, T), key_mask, S(-1e9));
        Var oh = t.attn_apply(t.softmax_rows(sc), vh, T);
        att = hi == 0 ? oh : t.concat_cols(att, oh);
      }
      h = t.add(h, t.add_rowvec(t.matmul(att, ps[b.wo]), ps[b.bo]));
      Var f = t.layer_norm(h, ps[b.ln2_g], ps[b.ln2_b]);
      Var ff = t.add_rowvec(
          t.matmul(t.elu(t.add_rowvec(t.matmul(f, ps[b.wf1]), ps[b.bf1])), ps[b.wf2]), ps[b.bf2]);
      h = t.add(h, ff);
    }
    return t.segment_max(h, T, keep);
  }
};

}  // namespace keyloco::nets
