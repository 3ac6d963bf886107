#include "kunlun/seqsum.hpp"

#include <cmath>

namespace kunlun {

SummarySplit SummarySplit::from_budget(std::size_t n) {
  const std::size_t q = n / 4;
  return {q, n - 2 * q, q};
}

void HspConfig::validate(std::size_t d) const {
  if (heads < 1 || d % heads != 0)
    throw ValidationError("summary attention: dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
  if (split.total() == 0) throw ValidationError("summary token budget must be >= 1");
  if (!pma_only && split.hsp > 0) {
    if (rank < 1) throw ValidationError("SumKronLinear rank must be >= 1");
    if (seeds <= split.hsp)
      throw ValidationError("seed count " + std::to_string(seeds) + " must exceed summary tokens " +
                            std::to_string(split.hsp));
  }
}

Var pma(Var s, Var queries, const MhaParams& attn) { return mha_attend(queries, s, attn); }

Var sumkronlinear(Var x, const std::vector<Var>& z, const std::vector<Var>& w) {
  if (z.empty() || z.size() != w.size()) throw ShapeError("SumKronLinear: need k >= 1 matching (Z, W) pairs");
  Var y;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i].rows() != x.rows() || w[i].rows() != x.cols() || w[i].cols() != x.cols())
      throw ShapeError("SumKronLinear: term " + std::to_string(i) + " does not match input " + x.value().shape_str());
    Var term = matmul(matmul_tn(z[i], x), w[i]);
    y = y.valid() ? add(y, term) : term;
  }
  return y;
}

std::uint64_t sumkron_param_count(std::size_t S, std::size_t T_out, std::size_t D, std::size_t k) {
  return static_cast<std::uint64_t>(k) * (static_cast<std::uint64_t>(S) * T_out + static_cast<std::uint64_t>(D) * D);
}

Var hsp_seed_attend(Tape& tape, const std::string& prefix, Var s, std::size_t heads) {
  Var seeds = tape.param(prefix + ".seeds");
  MhaParams attn = bind_mha(tape, prefix + ".attn", heads);
  if (s.rows() == 0) return zeros(tape, seeds.rows(), seeds.cols());
  return mha_attend(rms_norm_rows(seeds, tape.param(prefix + ".norm_gain")), s, attn);
}

Var hsp_pool(Tape& tape, const std::string& prefix, Var s, std::size_t heads, std::size_t rank) {
  Var seeded = hsp_seed_attend(tape, prefix, s, heads);
  std::vector<Var> z, w;
  for (std::size_t i = 0; i < rank; ++i) {
    z.push_back(tape.param(prefix + ".kron.z" + std::to_string(i)));
    w.push_back(tape.param(prefix + ".kron.w" + std::to_string(i)));
  }
  return sumkronlinear(seeded, z, w);
}

Var SummaryBundle::stacked() const {
  std::vector<Var> parts;
  for (const Var& v : {cls, hsp, recent})
    if (v.valid() && v.rows() > 0) parts.push_back(v);
  if (parts.empty()) throw ShapeError("summary bundle is empty");
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Var recent_rows(Tape& tape, Var s, std::size_t n) {
  const std::size_t T = s.rows();
  if (n == 0) return zeros(tape, 0, s.cols());
  if (T >= n) return T == n ? s : slice_rows(s, T - n, T);
  if (T == 0) return zeros(tape, n, s.cols());
  return concat_rows({zeros(tape, n - T, s.cols()), s});
}

namespace {

void init_queries(ParamStore& params, const std::string& prefix, std::size_t n, std::size_t d, Rng& rng) {
  params[prefix + ".queries"] = rng.normal_tensor(n, d, 1.0);
  init_mha(params, prefix + ".attn", d, rng);
}

}  // namespace

void init_summary(ParamStore& params, const std::string& prefix, std::size_t d, const HspConfig& cfg, Rng& rng) {
  cfg.validate(d);
  if (cfg.split.cls > 0) init_queries(params, prefix + ".cls", cfg.split.cls, d, rng);
  if (cfg.split.hsp == 0) return;
  if (cfg.pma_only) {
    init_queries(params, prefix + ".pma", cfg.split.hsp, d, rng);
    return;
  }
  const std::string hp = prefix + ".hsp";
  const std::size_t S = cfg.seeds, T = cfg.split.hsp;
  params[hp + ".seeds"] = rng.normal_tensor(S, d, 1.0);
  params[hp + ".norm_gain"] = Tensor::matrix(1, d, 1.0);
  init_mha(params, hp + ".attn", d, rng);
  // Noisy block averages over seeds, and W near the identity, so the
  // compression starts close to mean pooling.
  for (std::size_t i = 0; i < cfg.rank; ++i) {
    Tensor z = rng.normal_tensor(S, T, 0.01);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t lo = t * S / T, hi = (t + 1) * S / T;
      for (std::size_t r = lo; r < hi; ++r) z(r, t) += 1.0 / static_cast<double>(hi - lo);
    }
    Tensor w = rng.normal_tensor(d, d, 0.01);
    for (std::size_t j = 0; j < d; ++j) w(j, j) += 1.0 / static_cast<double>(cfg.rank);
    params[hp + ".kron.z" + std::to_string(i)] = std::move(z);
    params[hp + ".kron.w" + std::to_string(i)] = std::move(w);
  }
}

SummaryBundle hsp_summarize(Tape& tape, const std::string& prefix, Var s, const HspConfig& cfg) {
  SummaryBundle out;
  if (cfg.split.cls > 0) {
    const std::string cp = prefix + ".cls";
    out.cls = pma(s, tape.param(cp + ".queries"), bind_mha(tape, cp + ".attn", cfg.heads));
  }
  if (cfg.split.hsp > 0) {
    if (cfg.pma_only) {
      const std::string pp = prefix + ".pma";
      out.hsp = pma(s, tape.param(pp + ".queries"), bind_mha(tape, pp + ".attn", cfg.heads));
    } else {
      out.hsp = hsp_pool(tape, prefix + ".hsp", s, cfg.heads, cfg.rank);
    }
  }
  out.recent = recent_rows(tape, s, cfg.split.recent);
  return out;
}

std::uint64_t summary_macs(std::size_t T, std::size_t d, const HspConfig& cfg) {
  std::uint64_t macs = cross_attention_macs(cfg.split.cls, T, d);
  if (cfg.split.hsp == 0) return macs;
  if (cfg.pma_only) return macs + cross_attention_macs(cfg.split.hsp, T, d);
  macs += cross_attention_macs(cfg.seeds, T, d);
  if (T > 0)
    macs += static_cast<std::uint64_t>(cfg.rank) *
            (static_cast<std::uint64_t>(cfg.split.hsp) * cfg.seeds * d + static_cast<std::uint64_t>(cfg.split.hsp) * d * d);
  return macs;
}

}  // namespace kunlun
