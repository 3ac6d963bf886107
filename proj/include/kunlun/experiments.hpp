#pragma once

#include "kunlun/train.hpp"

#include <string>
#include <vector>

namespace kunlun {

enum class ComputeAxis { kFlops, kFlopsSamples };
ComputeAxis parse_compute_axis(const std::string& name);

/// Cartesian product of top-level config overrides, e.g. {"layers": [1, 2, 3, 4]}.
std::vector<ModelConfig> expand_grid(const ModelConfig& base, const std::string& grid_json);

struct SweepPoint {
  ModelConfig config;
  double flops_per_sample = 0;
  double compute = 0;
  double final_ne = 0;
  std::vector<RunRecord> records;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  ScalingFit fit;
};

/// Trains every grid config on the same stream and fits NE against compute.
SweepResult sweep_scaling(const std::vector<ModelConfig>& grid, const std::vector<Sample>& stream,
                          ComputeAxis axis = ComputeAxis::kFlops, const RecordCallback& on_record = {});
std::string sweep_csv(const SweepResult& result);

/// Known toggles: pffn, pma, full_attention, no_compskip, rank1_kron, single_expert.
ModelConfig apply_toggle(const ModelConfig& base, const std::string& toggle);

struct AblationRow {
  std::string toggle;  // "baseline" for the unmodified config
  double gflops = 0;
  double delta_gflops_pct = 0;
  bool trained = false;
  double eval_ne = 0;
  double delta_ne_pct = 0;
  double qps = 0;
  FlopsLedger ledger;
};

/// Baseline plus one row per toggle. Without data only the ledger columns are filled.
std::vector<AblationRow> ablate(const ModelConfig& base, const std::vector<std::string>& toggles,
                                const std::vector<Sample>* stream = nullptr);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace kunlun
