#pragma once

#include "kunlun/config.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace kunlun {

struct NeReport {
  double cross_entropy = 0;       // nats per sample
  double background_entropy = 0;  // entropy of the empirical CTR, nats
  double ne = 0;
  double ctr = 0;
  std::size_t n = 0;
};

/// Cross-entropy of `preds` (clipped to [eps, 1 - eps]) divided by the
/// entropy of the empirical click rate.
NeReport normalized_entropy(std::span<const double> labels, std::span<const double> preds, double eps = 1e-12);

struct FlopsEntry {
  std::string module;
  std::uint64_t flops = 0;        // per sample, summed over every evaluation
  std::size_t evaluations = 0;    // layers (or passes) in which the module ran
};

/// Per-sample forward FLOPs (2 per multiply-accumulate) by module.
struct FlopsLedger {
  std::vector<FlopsEntry> entries;

  void add(const std::string& module, std::uint64_t macs);
  void mark(const std::string& module);
  std::uint64_t total() const;
  std::uint64_t flops(const std::string& module) const;
  std::size_t evaluations(const std::string& module) const;
  bool has(const std::string& module) const;
};

/// Analytic ledger at the configured maximum sequence lengths, honoring the
/// skip schedule and variant swaps.
FlopsLedger flops_estimate(const ModelConfig& cfg);
/// (without - with) / without, comparing the schedule disabled and enabled.
double compskip_reduction(const ModelConfig& cfg);

double mfu(const FlopsLedger& ledger, double samples_per_sec, double peak_flops, double devices = 1);

struct ScalingFit {
  double ne0 = 0;
  double eta = 0;
  double c0 = 0;
  double residual_rms = 0;
  std::vector<std::pair<double, double>> points;  // (compute, NE)

  double predict(double compute) const;
};

/// Least squares NE = NE0 - eta * log(C / C0), C0 = min C.
ScalingFit fit_scaling(std::vector<std::pair<double, double>> points);
double scaling_efficiency(const ScalingFit& fit, double eta_baseline);

}  // namespace kunlun
