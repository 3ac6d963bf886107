#include "kunlun/interaction.hpp"

#include <cmath>

namespace kunlun {

ExpertPartition ExpertPartition::even(std::size_t tokens, std::size_t experts) {
  if (experts < 1 || experts > tokens)
    throw ValidationError("cannot split " + std::to_string(tokens) + " tokens over " + std::to_string(experts) +
                          " experts");
  ExpertPartition p;
  for (std::size_t j = 0; j < experts; ++j) p.ranges.emplace_back(j * tokens / experts, (j + 1) * tokens / experts);
  return p;
}

void ExpertPartition::validate(std::size_t tokens) const {
  if (ranges.empty()) throw ValidationError("expert partition is empty");
  std::size_t at = 0;
  for (const auto& [b, e] : ranges) {
    if (b != at || e <= b)
      throw ValidationError("expert ranges must be non-empty, contiguous and start at 0; got [" + std::to_string(b) +
                            ", " + std::to_string(e) + ")");
    at = e;
  }
  if (at != tokens)
    throw ValidationError("expert ranges cover " + std::to_string(at) + " tokens, combined input has " +
                          std::to_string(tokens));
}

void init_wukong(ParamStore& params, const std::string& prefix, std::size_t tokens, std::size_t d,
                 std::size_t hidden, Rng& rng, double dot_gain) {
  init_mlp(params, prefix + ".deep", {d, hidden, d}, rng, 0.5);
  init_linear(params, prefix + ".dot", tokens * (tokens + 1) / 2, tokens * d, rng, dot_gain);
}

Var wukong_expert(Tape& tape, const std::string& prefix, Var x, Activation act) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ShapeError("Wukong expert needs at least one token");
  Var deep = apply_mlp(tape, prefix + ".deep", x, 2, act);
  Var pairs = upper_triangle(matmul_nt(x, x));
  Var dot = reshape(apply_linear(tape, prefix + ".dot", pairs), n, d);
  return add(add(x, deep), dot);
}

void init_global_interaction(ParamStore& params, const std::string& prefix, std::size_t x_tokens,
                             const ExpertPartition& part, std::size_t d, std::size_t hidden, Rng& rng) {
  const std::size_t total = part.ranges.empty() ? 0 : part.ranges.back().second;
  part.validate(total);
  for (std::size_t j = 0; j < part.experts(); ++j) {
    const auto [b, e] = part.ranges[j];
    init_wukong(params, prefix + ".expert" + std::to_string(j), e - b, d, hidden, rng);
  }
  params[prefix + ".agg"] = rng.normal_tensor(x_tokens, total, 0.05 / std::sqrt(static_cast<double>(total)));
}

Var expert_outputs(Tape& tape, const std::string& prefix, Var combined, const ExpertPartition& part) {
  part.validate(combined.rows());
  std::vector<Var> outs;
  for (std::size_t j = 0; j < part.experts(); ++j) {
    const auto [b, e] = part.ranges[j];
    Var xi = (b == 0 && e == combined.rows()) ? combined : slice_rows(combined, b, e);
    outs.push_back(wukong_expert(tape, prefix + ".expert" + std::to_string(j), xi));
  }
  return outs.size() == 1 ? outs.front() : concat_rows(outs);
}

Var global_interaction(Tape& tape, const std::string& prefix, Var x, const std::vector<Var>& summaries,
                       const ExpertPartition& part) {
  std::vector<Var> parts{x};
  for (const Var& s : summaries) {
    if (s.cols() != x.cols())
      throw ShapeError("global interaction: summary width " + std::to_string(s.cols()) + " differs from " +
                       std::to_string(x.cols()));
    if (s.rows() > 0) parts.push_back(s);
  }
  Var combined = parts.size() == 1 ? x : concat_rows(parts);
  Var h = expert_outputs(tape, prefix, combined, part);
  Var agg = tape.param(prefix + ".agg");
  if (agg.rows() != x.rows() || agg.cols() != combined.rows())
    throw ShapeError("global interaction: aggregation " + agg.value().shape_str() + " does not match " +
                     std::to_string(x.rows()) + " x " + std::to_string(combined.rows()));
  return add(x, matmul(agg, h));
}

std::uint64_t wukong_macs(std::size_t tokens, std::size_t d, std::size_t hidden) {
  const std::uint64_t n = tokens;
  return 2 * n * d * hidden + n * n * d + (n * d) * (n * (n + 1) / 2);
}

std::uint64_t aggregation_macs(std::size_t x_tokens, std::size_t total_tokens, std::size_t d) {
  return static_cast<std::uint64_t>(x_tokens) * total_tokens * d;
}

}  // namespace kunlun
