#pragma once

#include "kunlun/gdpa.hpp"
#include "kunlun/interaction.hpp"
#include "kunlun/preproc.hpp"
#include "kunlun/seqsum.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kunlun {

/// Per-event capacity knobs. An event reads one or more schema streams
/// (`sources`, by name) and fuses them into one sequence.
struct EventConfig {
  std::string name;
  std::vector<std::string> sources;
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t tokens = 8;
  std::optional<std::size_t> layers;  // defaults to the global depth
  std::size_t window = 8;
  bool causal = false;
  std::optional<SummarySplit> split;  // defaults to SummarySplit::from_budget(tokens)
  std::size_t seeds = 16;
  std::size_t rank = 2;
  std::size_t n_kv = 16;
  std::optional<double> tau;  // defaults to the longest source's max_len
  std::vector<Activation> activations{Activation::kSilu, Activation::kRelu, Activation::kIdentity,
                                      Activation::kTanh};
};

enum class WeightGenTiming { kSameLayer, kPreviousLayer };
enum class RotePlacement { kAfterFusion, kBeforeFusion, kOff };
enum class GdpaKernel { kNaive, kBlockwise };

struct RoteSettings {
  RotePlacement placement = RotePlacement::kAfterFusion;
  double base = 10000.0;
  double tau_scale = 60.0;
  GapConvention gaps = GapConvention::kGapToPrevious;
};

/// Component swaps used by ablations.
struct VariantSettings {
  bool pffn = false;            // original personalized FFN instead of GDPA
  bool pma = false;             // learnable-query pooling instead of seed pooling
  bool full_attention = false;  // dense instead of sliding-window self-attention
  GdpaKernel kernel = GdpaKernel::kBlockwise;
  TileSize tile{16, 8};
};

struct TrainSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch = 64;
  std::size_t eval_stride = 10;   // every eval_stride-th sample is held out
  std::size_t record_every = 50;  // optimizer steps between records
  std::size_t max_samples = 0;    // 0 = whole stream
  bool linear_decay = false;      // lr falls linearly to zero over the pass
};

struct ModelConfig {
  FeatureSchema schema;
  std::size_t d = 32;
  std::size_t layers = 4;
  std::size_t n_sum = 4;
  bool compskip = true;
  WeightGenTiming weight_gen = WeightGenTiming::kSameLayer;
  std::vector<EventConfig> events;
  std::size_t experts = 2;
  std::vector<std::pair<std::size_t, std::size_t>> expert_ranges;  // empty = even split
  std::size_t deep_hidden = 64;
  std::size_t head_hidden = 0;  // 0 = 4d
  std::size_t pffn_hidden = 32;
  std::size_t fusion_layers = 1;
  RoteSettings rote;
  VariantSettings variant;
  std::uint64_t seed = 1;
  TrainSettings train;

  /// Consistency checks across modules; throws ValidationError.
  void validate() const;

  std::size_t x_tokens() const { return schema.sparse_count() + 1; }
  std::size_t combined_tokens() const;
  std::size_t head_width() const { return head_hidden ? head_hidden : 4 * d; }
  std::size_t event_layers(std::size_t e) const { return events[e].layers.value_or(layers); }
  std::size_t event_max_len(std::size_t e) const;
  std::vector<std::size_t> event_sources(std::size_t e) const;
  SummarySplit event_split(std::size_t e) const;
  GdpaConfig event_gdpa(std::size_t e) const;
  HspConfig event_hsp(std::size_t e) const;
  ExpertPartition partition() const;
};

ModelConfig config_from_json(const std::string& text);
ModelConfig load_config(const std::string& path);
std::string config_to_json(const ModelConfig& cfg, int indent = 2);

}  // namespace kunlun
