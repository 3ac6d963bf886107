#include "kunlun/metrics.hpp"

#include "kunlun/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace kunlun {

NeReport normalized_entropy(std::span<const double> labels, std::span<const double> preds, double eps) {
  if (labels.empty()) throw ValidationError("normalized entropy needs at least one sample");
  if (labels.size() != preds.size()) throw ValidationError("labels and predictions differ in length");
  NeReport r;
  r.n = labels.size();
  double clicks = 0, ce = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw ValidationError("labels must be 0 or 1");
    if (!std::isfinite(preds[i])) throw NumericalError("prediction is not finite");
    const double p = std::clamp(preds[i], eps, 1.0 - eps);
    clicks += y;
    ce -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
  }
  r.ctr = clicks / static_cast<double>(r.n);
  if (r.ctr <= 0.0 || r.ctr >= 1.0) throw ValidationError("degenerate background entropy");
  r.cross_entropy = ce / static_cast<double>(r.n);
  r.background_entropy = -(r.ctr * std::log(r.ctr) + (1.0 - r.ctr) * std::log1p(-r.ctr));
  r.ne = r.cross_entropy / r.background_entropy;
  return r;
}

void FlopsLedger::add(const std::string& module, std::uint64_t macs) {
  for (auto& e : entries)
    if (e.module == module) {
      e.flops += 2 * macs;
      return;
    }
  entries.push_back({module, 2 * macs, 0});
}

void FlopsLedger::mark(const std::string& module) {
  for (auto& e : entries)
    if (e.module == module) {
      ++e.evaluations;
      return;
    }
  entries.push_back({module, 0, 1});
}

std::uint64_t FlopsLedger::total() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.flops;
  return t;
}

std::uint64_t FlopsLedger::flops(const std::string& module) const {
  for (const auto& e : entries)
    if (e.module == module) return e.flops;
  return 0;
}

std::size_t FlopsLedger::evaluations(const std::string& module) const {
  for (const auto& e : entries)
    if (e.module == module) return e.evaluations;
  return 0;
}

bool FlopsLedger::has(const std::string& module) const {
  return std::any_of(entries.begin(), entries.end(), [&](const FlopsEntry& e) { return e.module == module; });
}

FlopsLedger flops_estimate(const ModelConfig& cfg) {
  cfg.validate();
  FlopsLedger led;
  const std::size_t d = cfg.d, n1 = cfg.x_tokens(), E = cfg.events.size();
  auto once = [&](const std::string& m, std::uint64_t macs) {
    led.add(m, macs);
    led.mark(m);
  };

  once("embed_dense", static_cast<std::uint64_t>(d) * cfg.schema.dense);
  once("embed_lookup", 0);
  std::uint64_t fusion = 0;
  for (std::size_t e = 0; e < E; ++e) {
    const std::uint64_t T = cfg.event_max_len(e), de = cfg.events[e].d, K = cfg.events[e].sources.size();
    fusion += T * K * de * de + (cfg.fusion_layers - 1) * T * de * de;
  }
  if (E > 0) once("fusion", fusion);

  const std::vector<LayerSkipFlags> schedule =
      cfg.layers ? compskip_config(cfg.layers, cfg.compskip) : std::vector<LayerSkipFlags>{};
  const ExpertPartition part = cfg.partition();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerSkipFlags f = schedule[l];
    std::set<std::string> ran;
    auto add = [&](const std::string& m, std::uint64_t macs) {
      led.add(m, macs);
      ran.insert(m);
    };
    bool any_active = false;
    for (std::size_t e = 0; e < E; ++e) {
      if (l >= cfg.event_layers(e)) continue;
      any_active = true;
      const auto& ev = cfg.events[e];
      const std::size_t T = cfg.event_max_len(e), de = ev.d;
      if (!f.skip_pffn) {
        if (cfg.variant.pffn) {
          add("pffn", pffn_macs(T, cfg.n_sum, d, de, cfg.pffn_hidden));
        } else {
          add("weight_gen", weight_gen_macs(cfg.n_sum, d, ev.n_kv, de));
          add("gdpa", gdpa_macs(T, ev.n_kv, de));
        }
      }
      if (!f.skip_hsp) {
        const HspConfig h = cfg.event_hsp(e);
        add("cls_pooling", cross_attention_macs(h.split.cls, T, de));
        if (h.split.hsp > 0) {
          if (h.pma_only) {
            add("pma_pooling", cross_attention_macs(h.split.hsp, T, de));
          } else {
            add("seed_attention", cross_attention_macs(h.seeds, T, de));
            add("sumkron", static_cast<std::uint64_t>(h.rank) *
                               (static_cast<std::uint64_t>(h.split.hsp) * h.seeds * de +
                                static_cast<std::uint64_t>(h.split.hsp) * de * de));
          }
        }
        if (de != d) add("adapter", static_cast<std::uint64_t>(ev.tokens) * de * d);
      }
      if (!f.skip_attention) {
        const std::uint64_t pairs =
            cfg.variant.full_attention ? static_cast<std::uint64_t>(T) * T : band_pairs(T, {ev.window, ev.causal});
        add("attention", self_attention_macs(T, de, pairs));
      }
    }
    if (!f.skip_pffn && any_active) add("summarize", static_cast<std::uint64_t>(cfg.n_sum) * n1 * d);
    std::uint64_t experts = 0;
    for (const auto& [b, e] : part.ranges) experts += wukong_macs(e - b, d, cfg.deep_hidden);
    add("interaction", experts);
    add("aggregation", aggregation_macs(n1, cfg.combined_tokens(), d));
    for (const auto& m : ran) led.mark(m);
  }
  once("head", static_cast<std::uint64_t>(n1) * d * cfg.head_width() + cfg.head_width());
  return led;
}

double compskip_reduction(const ModelConfig& cfg) {
  ModelConfig on = cfg, off = cfg;
  on.compskip = true;
  off.compskip = false;
  const double with = static_cast<double>(flops_estimate(on).total());
  const double without = static_cast<double>(flops_estimate(off).total());
  return (without - with) / without;
}

double mfu(const FlopsLedger& ledger, double samples_per_sec, double peak_flops, double devices) {
  if (!(peak_flops > 0)) throw ValidationError("peak FLOP rate must be > 0");
  if (!(devices > 0)) throw ValidationError("device count must be > 0");
  if (samples_per_sec < 0) throw ValidationError("throughput must be >= 0");
  return static_cast<double>(ledger.total()) * samples_per_sec / (peak_flops * devices);
}

double ScalingFit::predict(double compute) const { return ne0 - eta * std::log(compute / c0); }

ScalingFit fit_scaling(std::vector<std::pair<double, double>> points) {
  if (points.size() < 3) throw ValidationError("scaling fit needs at least 3 points");
  ScalingFit fit;
  fit.c0 = INFINITY;
  for (const auto& [c, ne] : points) {
    if (!(c > 0) || !std::isfinite(c)) throw ValidationError("compute values must be positive and finite");
    if (!std::isfinite(ne)) throw ValidationError("NE values must be finite");
    fit.c0 = std::min(fit.c0, c);
  }
  const double n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const auto& [c, ne] : points) {
    mx += std::log(c / fit.c0);
    my += ne;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& [c, ne] : points) {
    const double x = std::log(c / fit.c0) - mx;
    sxx += x * x;
    sxy += x * (ne - my);
  }
  if (!(sxx > 0)) throw ValidationError("scaling fit needs distinct compute values");
  const double slope = sxy / sxx;
  fit.eta = -slope;
  fit.ne0 = my - slope * mx;
  double rss = 0;
  for (const auto& [c, ne] : points) {
    const double r = ne - (fit.ne0 + slope * std::log(c / fit.c0));
    rss += r * r;
  }
  fit.residual_rms = std::sqrt(rss / n);
  fit.points = std::move(points);
  return fit;
}

double scaling_efficiency(const ScalingFit& fit, double eta_baseline) {
  if (!(eta_baseline > 0)) throw ValidationError("baseline scaling coefficient must be > 0");
  return fit.eta / eta_baseline;
}

}  // namespace kunlun
