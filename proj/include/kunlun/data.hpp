#pragma once

#include "kunlun/preproc.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kunlun {

struct SyntheticStream {
  std::string name;
  std::size_t max_len = 64;
  std::size_t min_len = 0;
  double alignment = 1.0;   // how strongly items follow the user's taste
  double mean_gap_s = 600;  // mean seconds between consecutive events
};

/// Generator settings. Sparse feature 0 is the user id, feature 1 the
/// candidate item, the rest are context features with their own biases.
struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t samples = 20000;
  std::uint32_t users = 1000;
  std::uint32_t items = 2000;
  std::size_t latent_dim = 8;
  std::size_t dense = 4;
  std::vector<std::uint32_t> context_vocab{16, 16, 8, 8, 4, 4};
  std::vector<SyntheticStream> streams{{"click", 64, 4, 2.0, 600}, {"impression", 64, 8, 0.5, 120}};
  std::size_t pool = 32;          // candidates considered per sequence event
  double recency_half_life = 8;   // events
  double prior_ctr = 0.12;
  double temperature = 1.0;
  double alpha = 1.5;  // sequence term
  double beta = 1.0;   // user x candidate and context cross term
  double gamma = 0.5;  // dense term

  FeatureSchema schema() const;
  void validate() const;
};

SyntheticSpec spec_from_json(const std::string& text);
SyntheticSpec load_spec(const std::string& path);

struct Dataset {
  FeatureSchema schema;
  std::vector<Sample> samples;
};

Dataset gen_data(const SyntheticSpec& spec);

/// NE of the generator's true click probabilities against the drawn labels.
double ne_floor(const Dataset& data);

/// Little-endian binary layout, see README.
std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(std::string_view bytes);
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

/// Rows i with i % stride == stride - 1 are held out for evaluation.
void split_stream(const std::vector<Sample>& all, std::size_t stride, std::vector<Sample>& train,
                  std::vector<Sample>& eval);

}  // namespace kunlun
