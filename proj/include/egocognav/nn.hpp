#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "egocognav/tape.hpp"

namespace egocognav {

// Sinusoidal position table, one row per timestep. Added to queries and keys
// at attention time; the residual stream never carries it, so constant inputs
// produce step-identical tokens.
inline Tensor sinusoidal_positions(std::size_t steps, std::size_t dim) {
  Tensor out = Tensor::zeros(steps, dim);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i * 2 < dim; ++i) {
      const double rate = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                 static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      out.at(t, 2 * i) = std::sin(angle);
      if (2 * i + 1 < dim) out.at(t, 2 * i + 1) = std::cos(angle);
    }
  }
  return out;
}

struct Linear {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, std::size_t in,
         std::size_t out, Rng& rng, bool with_bias = true)
      : w(&ps.create(name + ".w", {in, out}, in, rng, true)),
        b(with_bias ? &ps.create_const(name + ".b", {1, out}, 0.0, false)
                    : nullptr) {}

  Var operator()(Tape& t, Var x) const {
    Var y = t.matmul(x, t.param(*w));
    return b ? t.add_row(y, t.param(*b)) : y;
  }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim)
      : gain(&ps.create_const(name + ".gain", {1, dim}, 1.0, false)),
        bias(&ps.create_const(name + ".bias", {1, dim}, 0.0, false)) {}

  Var operator()(Tape& t, Var x) const {
    return t.add_row(t.mul_row(t.layer_norm_rows(x), t.param(*gain)),
                     t.param(*bias));
  }
};

// Multi-head attention over row-token matrices. Optional position tables are
// added to the query/key inputs only; values stay position-free. The q/k/v
// projections are bias-free (a key bias cancels inside the row softmax and a
// value bias is absorbed by the output offset); wo carries the bias.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t d_model = 0;
  std::size_t n_heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, std::size_t dim,
                     std::size_t heads, Rng& rng)
      : wq(ps, name + ".wq", dim, dim, rng, false),
        wk(ps, name + ".wk", dim, dim, rng, false),
        wv(ps, name + ".wv", dim, dim, rng, false),
        wo(ps, name + ".wo", dim, dim, rng),
        d_model(dim),
        n_heads(heads) {
    if (heads == 0 || dim % heads != 0)
      throw BadConfig("attention width not divisible by head count");
  }

  Var operator()(Tape& t, Var query, Var keyval, Var query_pos = Var{},
                 Var keyval_pos = Var{}) const {
    Var qin = query_pos.id >= 0 ? t.add(query, query_pos) : query;
    Var kin = keyval_pos.id >= 0 ? t.add(keyval, keyval_pos) : keyval;
    Var q = wq(t, qin);
    Var k = wk(t, kin);
    Var v = wv(t, keyval);
    const std::size_t dh = d_model / n_heads;
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      heads.push_back(scaled_dot_attention(t, t.slice_cols(q, h * dh, dh),
                                           t.slice_cols(k, h * dh, dh),
                                           t.slice_cols(v, h * dh, dh)));
    }
    return wo(t, t.concat_cols(heads));
  }
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(ParamStore& ps, const std::string& name, std::size_t dim,
              std::size_t hidden, Rng& rng)
      : fc1(ps, name + ".fc1", dim, hidden, rng),
        fc2(ps, name + ".fc2", hidden, dim, rng) {}

  Var operator()(Tape& t, Var x) const { return fc2(t, t.gelu(fc1(t, x))); }
};

// Attention sub-block: residual attention with post-norm, then a residual
// feed-forward with its own norm.
struct ResidualAttention {
  MultiHeadAttention attn;
  LayerNorm ln_attn;
  FeedForward ff;
  LayerNorm ln_ff;

  ResidualAttention() = default;
  ResidualAttention(ParamStore& ps, const std::string& name, std::size_t dim,
                    std::size_t heads, std::size_t ff_hidden, Rng& rng)
      : attn(ps, name + ".attn", dim, heads, rng),
        ln_attn(ps, name + ".ln_attn", dim),
        ff(ps, name + ".ff", dim, ff_hidden, rng),
        ln_ff(ps, name + ".ln_ff", dim) {}

  Var operator()(Tape& t, Var x, Var keyval, Var x_pos = Var{},
                 Var keyval_pos = Var{}) const {
    x = ln_attn(t, t.add(x, attn(t, x, keyval, x_pos, keyval_pos)));
    x = ln_ff(t, t.add(x, ff(t, x)));
    return x;
  }
};

}  // namespace egocognav
