#pragma once

#include "kunlun/layers.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace kunlun {

/// Contiguous token ranges [begin, end), one per expert.
struct ExpertPartition {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;

  std::size_t experts() const { return ranges.size(); }
  /// Splits `tokens` into `experts` contiguous ranges of near-equal size.
  static ExpertPartition even(std::size_t tokens, std::size_t experts);
  /// Ranges must be non-empty, disjoint and cover [0, tokens) in order.
  void validate(std::size_t tokens) const;
};

/// "<prefix>.deep.l{0,1}" (token-wise d -> hidden -> d) and "<prefix>.dot.{w,b}"
/// mapping the n_i(n_i+1)/2 pairwise dot products to n_i x d.
void init_wukong(ParamStore& params, const std::string& prefix, std::size_t tokens, std::size_t d,
                 std::size_t hidden, Rng& rng, double dot_gain = 0.1);
/// x + DeepMLP(x) + DotBlock(x).
Var wukong_expert(Tape& tape, const std::string& prefix, Var x, Activation act = Activation::kSilu);

/// Experts "<prefix>.expert<j>" over the partition of [X; summaries...] and the
/// aggregation map "<prefix>.agg" ((n+1) x total tokens).
void init_global_interaction(ParamStore& params, const std::string& prefix, std::size_t x_tokens,
                             const ExpertPartition& part, std::size_t d, std::size_t hidden, Rng& rng);
/// X + A . concat_j(Expert_j(combined[range_j])).
Var global_interaction(Tape& tape, const std::string& prefix, Var x, const std::vector<Var>& summaries,
                       const ExpertPartition& part);
/// Expert outputs before aggregation, stacked in token order.
Var expert_outputs(Tape& tape, const std::string& prefix, Var combined, const ExpertPartition& part);

std::uint64_t wukong_macs(std::size_t tokens, std::size_t d, std::size_t hidden);
std::uint64_t aggregation_macs(std::size_t x_tokens, std::size_t total_tokens, std::size_t d);

}  // namespace kunlun
