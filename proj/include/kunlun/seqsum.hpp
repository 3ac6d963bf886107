#pragma once

#include "kunlun/attention.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kunlun {

/// Token budget of one event's summary: [cls | hsp | recent].
struct SummarySplit {
  std::size_t cls = 0;
  std::size_t hsp = 0;
  std::size_t recent = 0;

  std::size_t total() const { return cls + hsp + recent; }
  /// n/4 cls, n/4 recent, the rest to hsp.
  static SummarySplit from_budget(std::size_t n);
};

struct HspConfig {
  std::size_t heads = 1;
  std::size_t seeds = 16;
  std::size_t rank = 2;
  SummarySplit split;
  /// Replace the seed-pooling stage with plain learnable-query pooling.
  bool pma_only = false;

  void validate(std::size_t d) const;
};

/// Learnable-query attention pooling: MHA(queries, S, S). Zeros for T = 0.
Var pma(Var s, Var queries, const MhaParams& attn);

/// Y = sum_i Z_i^T X W_i, Z_i (S x T_out), W_i (D x D).
Var sumkronlinear(Var x, const std::vector<Var>& z, const std::vector<Var>& w);
/// Learnable scalars of a rank-k SumKronLinear: k * (S * T_out + D^2).
std::uint64_t sumkron_param_count(std::size_t S, std::size_t T_out, std::size_t D, std::size_t k);

/// "<prefix>.seeds", "<prefix>.norm_gain", "<prefix>.attn.*".
/// MHA(RMSNorm(seeds), S, S); zeros for T = 0.
Var hsp_seed_attend(Tape& tape, const std::string& prefix, Var s, std::size_t heads);
/// Seed attention followed by "<prefix>.kron.{z,w}<i>" compression to `tokens` rows.
Var hsp_pool(Tape& tape, const std::string& prefix, Var s, std::size_t heads, std::size_t rank);

struct SummaryBundle {
  Var cls;
  Var hsp;
  Var recent;

  /// Rows stacked [cls; hsp; recent], skipping empty parts.
  Var stacked() const;
};

/// Last `n` rows of s, zero-padded at the front when s is shorter.
Var recent_rows(Tape& tape, Var s, std::size_t n);

/// Parameters: "<prefix>.cls.{queries,attn.*}", "<prefix>.hsp.*" (or
/// "<prefix>.pma.{queries,attn.*}" when pma_only).
void init_summary(ParamStore& params, const std::string& prefix, std::size_t d, const HspConfig& cfg, Rng& rng);
SummaryBundle hsp_summarize(Tape& tape, const std::string& prefix, Var s, const HspConfig& cfg);

/// Multiply-accumulates of hsp_summarize over a length-T sequence.
std::uint64_t summary_macs(std::size_t T, std::size_t d, const HspConfig& cfg);

}  // namespace kunlun
