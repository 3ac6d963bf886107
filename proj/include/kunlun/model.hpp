#pragma once

#include "kunlun/config.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace kunlun {

struct LayerSkipFlags {
  bool skip_attention = false;
  bool skip_hsp = false;
  bool skip_pffn = false;

  bool operator==(const LayerSkipFlags&) const = default;
};

/// Alternating schedule: even layers skip self-attention, odd layers skip
/// summarization and the personalized FFN. All flags false when disabled.
std::vector<LayerSkipFlags> compskip_config(std::size_t layers, bool enabled = true);

/// Components actually evaluated during forward passes (per layer, counted
/// once even when several events run the component).
struct ForwardStats {
  std::size_t summaries = 0;
  std::size_t attention = 0;
  std::size_t pffn = 0;
  std::size_t interaction = 0;
};

struct EventState {
  Var seq;      // T x d_e, real rows only
  Var summary;  // tokens x d, invalid until first computed
};

struct LayerState {
  Var x;       // (n+1) x d
  Var x_prev;  // input of the previous layer (lagged weight generation)
  std::vector<EventState> events;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<LayerSkipFlags>& schedule() const { return schedule_; }

  /// Creates exactly the parameters the schedule and variant will use.
  ParamStore init_params(std::uint64_t seed) const;
  ParamStore init_params() const { return init_params(cfg_.seed); }

  /// Embeddings, fusion and rotary encoding: the state entering layer 0.
  LayerState embed(Tape& tape, const Sample& sample) const;
  LayerState layer_forward(Tape& tape, std::size_t layer, const LayerState& in, const LayerSkipFlags& flags,
                           ForwardStats* stats = nullptr) const;
  /// Logit of the head MLP over the flattened non-sequence tokens.
  Var head(Tape& tape, Var x) const;

  Var forward_logit(Tape& tape, const Sample& sample, ForwardStats* stats = nullptr) const;
  /// Mean binary cross-entropy over the samples.
  Var batch_loss(Tape& tape, std::span<const Sample> samples) const;
  std::vector<double> predict(const ParamStore& params, std::span<const Sample> samples) const;

 private:
  std::string event_prefix(std::size_t layer, std::size_t e) const;
  Var embed_event(Tape& tape, std::size_t e, const Sample& sample) const;
  Var summarize_event(Tape& tape, std::size_t layer, std::size_t e, Var seq) const;
  Var personalize(Tape& tape, std::size_t layer, std::size_t e, Var seq, Var x_sum) const;

  ModelConfig cfg_;
  std::vector<LayerSkipFlags> schedule_;
  std::vector<std::vector<std::size_t>> sources_;
  ExpertPartition partition_;
};

/// Learnable scalar count, optionally restricted to names starting with `prefix`.
std::uint64_t count_params(const ParamStore& params, const std::string& prefix = "");

}  // namespace kunlun
