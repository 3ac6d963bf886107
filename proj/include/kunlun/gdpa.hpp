#pragma once

#include "kunlun/layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kunlun {

struct GdpaConfig {
  std::size_t heads = 1;
  std::size_t n_kv = 16;
  double tau = 1.0;
  /// Cycled over heads.
  std::vector<Activation> activations{Activation::kSilu, Activation::kRelu, Activation::kIdentity,
                                      Activation::kTanh};

  Activation activation(std::size_t head) const { return activations[head % activations.size()]; }
  void validate(std::size_t d) const;
};

struct TileSize {
  std::size_t rows = 1;  // sequence rows per tile
  std::size_t kv = 1;    // key/value rows per tile
};

/// X_sum = P . X over the feature axis.
Var summarize_nonseq(Var x, Var pool);
void init_summarize(ParamStore& params, const std::string& name, std::size_t n_sum, std::size_t tokens, Rng& rng);

/// Personalized keys and values, n_kv x d each; head h owns columns
/// [h * d_h, (h + 1) * d_h).
struct GeneratedKv {
  Var keys;
  Var values;
};

/// Parameters "<prefix>.k.{w,b}" and "<prefix>.v.{w,b}" mapping the flattened
/// summary (n_sum * d_in) to n_kv * d.
void init_weight_gen(ParamStore& params, const std::string& prefix, std::size_t n_sum, std::size_t d_in,
                     std::size_t d, std::size_t n_kv, Rng& rng);
GeneratedKv generate_kv(Tape& tape, const std::string& prefix, Var x_sum, std::size_t n_kv, std::size_t d);

/// Query projection "<prefix>.wq" and output projection "<prefix>.wo", both d x d.
void init_gdpa(ParamStore& params, const std::string& prefix, std::size_t d, Rng& rng, double out_gain = 1.0);

/// S + Wo . concat_h(Act_h(Q_h K_h^T / tau) V_h) with Q = S . Wq^T, over the
/// first `valid` rows; later rows are padding and are returned unchanged.
Var gdpa_apply(Tape& tape, const std::string& prefix, Var s, const GeneratedKv& kv, const GdpaConfig& cfg,
               std::size_t valid);
/// Same result computed tile by tile over (rows, kv) blocks. The backward
/// pass recomputes each tile's scores instead of storing them.
Var gdpa_apply_blockwise(Tape& tape, const std::string& prefix, Var s, const GeneratedKv& kv, const GdpaConfig& cfg,
                         TileSize tile, std::size_t valid);

/// Weight generation from `x_sum` (under "<prefix>.wg") followed by gdpa_apply.
Var gdpa_forward(Tape& tape, const std::string& prefix, Var s, Var x_sum, const GdpaConfig& cfg);
Var gdpa_forward_blockwise(Tape& tape, const std::string& prefix, Var s, Var x_sum, const GdpaConfig& cfg,
                           TileSize tile);

/// Jagged batch: rows of `values` belong to samples by `offsets`, each sample
/// has its own summary. Empty samples contribute nothing.
Var gdpa_forward_jagged(Tape& tape, const std::string& prefix, Var values, const std::vector<std::size_t>& offsets,
                        const std::vector<Var>& x_sums, const GdpaConfig& cfg, const TileSize* tile = nullptr);

/// Two-layer MLP over the flattened summary emitting a d x d transform F;
/// returns S . F^T (no residual). Parameters "<prefix>.l0", "<prefix>.l1".
void init_pffn(ParamStore& params, const std::string& prefix, std::size_t n_sum, std::size_t d_in, std::size_t d,
               std::size_t hidden, Rng& rng);
Var pffn_original(Tape& tape, const std::string& prefix, Var x_sum, Var s);
/// The d x d transform alone.
Var pffn_transform(Tape& tape, const std::string& prefix, Var x_sum, std::size_t d);

std::uint64_t weight_gen_macs(std::size_t n_sum, std::size_t d_in, std::size_t n_kv, std::size_t d);
/// Query and output projections plus scores and weighted values.
std::uint64_t gdpa_macs(std::size_t T, std::size_t n_kv, std::size_t d);
std::uint64_t pffn_macs(std::size_t T, std::size_t n_sum, std::size_t d_in, std::size_t d, std::size_t hidden);

}  // namespace kunlun
