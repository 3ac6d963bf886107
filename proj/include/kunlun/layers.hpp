#pragma once

#include "kunlun/ops.hpp"

#include <cstdint>
#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace kunlun {

/// Seeded generator with portable normal draws (Box-Muller over mt19937_64),
/// so parameter init and synthetic data are reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Independent stream keyed by a name, so draws for one parameter group do
  /// not depend on which other groups exist.
  static Rng stream(std::uint64_t seed, std::string_view name);

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t index(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  std::uint64_t next() { return engine_(); }
  bool bernoulli(double p) { return uniform() < p; }
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }

  Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Dense layer parameters "<prefix>.w" (out x in) and "<prefix>.b" (1 x out).
void init_linear(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 double gain = 1.0, bool bias = true);
Var apply_linear(Tape& tape, const std::string& prefix, Var x, bool bias = true);

/// Feed-forward stack: widths {in, h1, ..., out}; activation after every layer
/// except the last. Parameters "<prefix>.l<i>.{w,b}".
void init_mlp(ParamStore& params, const std::string& prefix, const std::vector<std::size_t>& widths, Rng& rng,
              double last_gain = 1.0);
Var apply_mlp(Tape& tape, const std::string& prefix, Var x, std::size_t layers, Activation act);

/// Matrix of zeros as a tape constant.
Var zeros(Tape& tape, std::size_t rows, std::size_t cols);

}  // namespace kunlun
