#pragma once

#include "kunlun/layers.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kunlun {

struct EventStreamSchema {
  std::string name;
  std::uint32_t item_vocab = 1;
  std::size_t max_len = 1;
};

/// Raw feature layout: m dense values, n categorical features and K event
/// streams of item ids with timestamps.
struct FeatureSchema {
  std::size_t dense = 0;
  std::vector<std::uint32_t> sparse_vocab;
  std::vector<EventStreamSchema> events;

  std::size_t sparse_count() const { return sparse_vocab.size(); }
  void validate() const;
  bool operator==(const FeatureSchema&) const;
};

struct EventSequence {
  std::vector<std::uint32_t> items;
  std::vector<double> timestamps;  // seconds, non-decreasing
};

/// One impression: raw features plus its label.
struct Sample {
  std::uint8_t label = 0;
  double true_prob = 0.5;  // generator ground truth when known
  double request_time = 0.0;
  std::vector<double> dense;
  std::vector<std::uint32_t> sparse;
  std::vector<EventSequence> events;
};

/// Throws ValidationError naming the first field that does not conform.
void validate_sample(const FeatureSchema& schema, const Sample& sample);

enum class GapConvention { kGapToPrevious, kToCandidate };

struct RoteConfig {
  std::vector<double> theta;  // positional frequency per 2-dim block
  std::vector<double> phi;    // temporal frequency per 2-dim block
  double tau_scale = 60.0;    // seconds

  /// theta_i = base^(-2i/d), phi_i = theta_i.
  static RoteConfig geometric(std::size_t d, double base = 10000.0, double tau_scale = 60.0);
  void validate(std::size_t d) const;
};

/// x_dense^(1) = W_dense . x_dense^(0); returns 1 x d.
Var embed_dense(Var w_dense, std::span<const double> x_dense);
/// Row `id` of the embedding table (equivalent to a one-hot product); 1 x d.
Var embed_sparse(Var table, std::uint32_t id);
/// Stacks [dense; sparse_1; ...; sparse_n] into (n+1) x d.
Var assemble_nonseq(Var dense, const std::vector<Var>& sparse);

/// Multi-sequence fusion: right-aligns the K streams (zero-padding the shorter
/// ones at the front), concatenates along the embedding axis and applies the
/// row-wise MLP stored under `prefix`: `mlp_layers` linear layers, each
/// followed by `act`.
Var fuse_sequences(Tape& tape, const std::vector<Var>& seqs, const std::string& prefix, std::size_t mlp_layers,
                   Activation act = Activation::kSilu);
void init_fusion(ParamStore& params, const std::string& prefix, std::size_t streams, std::size_t d,
                 std::size_t mlp_layers, Rng& rng);

/// tau_t = log(1 + dt / tau_scale).
double rote_log_gap(double delta_t, double tau_scale);

/// Plane rotation of each 2-dim block i of x by the raw angle
/// position * theta_i + tau * phi_i. Accepts any real position/tau.
Tensor rote_raw(const Tensor& x, double position, double tau, const RoteConfig& cfg);
/// Rotary temporal embedding of a single 1 x d vector at position t with gap dt.
Tensor rote(const Tensor& x, double position, double delta_t, const RoteConfig& cfg);

/// Differentiable row-wise ROTE: row r is rotated with (positions[r], log gap of deltas[r]).
Var rote_rows(Var x, std::span<const double> positions, std::span<const double> delta_t, const RoteConfig& cfg);

/// Per-event time gaps for ROTE from non-decreasing timestamps.
std::vector<double> rote_gaps(std::span<const double> timestamps, double request_time, GapConvention convention);

}  // namespace kunlun
