#pragma once

#include "kunlun/layers.hpp"

#include <cstdint>
#include <string>

namespace kunlun {

/// Per-head Q/K/V projections (d -> d_h, stacked into d x d) and the output
/// projection, stored as "<prefix>.{wq,wk,wv,wo}".
struct MhaParams {
  Var wq, wk, wv, wo;
  std::size_t heads = 1;

  std::size_t dim() const { return wq.rows(); }
  std::size_t head_dim() const { return dim() / heads; }
};

void init_mha(ParamStore& params, const std::string& prefix, std::size_t d, Rng& rng, double out_gain = 1.0);
MhaParams bind_mha(Tape& tape, const std::string& prefix, std::size_t heads);

/// Half-window radius in positions: query t sees keys clamp([t-w, t+w]).
/// Causal windows stop at t.
struct WindowSpec {
  std::size_t w = 0;
  bool causal = false;
};

/// Multi-head attention MHA(queries, kv, kv) with softmax(Q_h K_h^T / sqrt(d_h)).
/// No residual. With an empty kv the result is all zeros.
Var mha_attend(Var queries, Var kv, const MhaParams& p);

/// Full self-attention over the first `valid` rows plus residual; rows at or
/// beyond `valid` are padding and pass through unchanged.
Var mha_full(Var s, const MhaParams& p, std::size_t valid);
Var mha_full(Var s, const MhaParams& p);

/// Sliding-window self-attention plus residual. Only in-band scores are ever
/// computed, O(T * w * d).
Var mha_window(Var s, const MhaParams& p, WindowSpec win, std::size_t valid);
Var mha_window(Var s, const MhaParams& p, WindowSpec win);

/// Number of (query, key) pairs the window admits over a length-T sequence.
std::uint64_t band_pairs(std::size_t T, WindowSpec win);

/// Multiply-accumulates of a self-attention block over T rows with `pairs`
/// scored pairs: Q/K/V/O projections plus scores and weighted values.
std::uint64_t self_attention_macs(std::size_t T, std::size_t d, std::uint64_t pairs);
/// Multiply-accumulates of mha_attend with nq queries over T keys.
std::uint64_t cross_attention_macs(std::size_t nq, std::size_t T, std::size_t d);

}  // namespace kunlun
