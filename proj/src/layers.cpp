#include "kunlun/layers.hpp"

#include <cmath>
#include <numbers>

namespace kunlun {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Rng Rng::stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ull;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  Rng r(0);
  r.engine_.seed(seq);
  return r;
}

Tensor Rng::normal_tensor(std::size_t rows, std::size_t cols, double stddev) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = stddev * normal();
  return t;
}

void init_linear(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 double gain, bool bias) {
  const double stddev = in == 0 ? 0.0 : gain / std::sqrt(static_cast<double>(in));
  params[prefix + ".w"] = rng.normal_tensor(out, in, stddev);
  if (bias) params[prefix + ".b"] = Tensor::matrix(1, out);
}

Var apply_linear(Tape& tape, const std::string& prefix, Var x, bool bias) {
  return linear(x, tape.param(prefix + ".w"), bias ? tape.param(prefix + ".b") : Var());
}

void init_mlp(ParamStore& params, const std::string& prefix, const std::vector<std::size_t>& widths, Rng& rng,
              double last_gain) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    init_linear(params, prefix + ".l" + std::to_string(i), widths[i], widths[i + 1], rng, last ? last_gain : 1.0);
  }
}

Var apply_mlp(Tape& tape, const std::string& prefix, Var x, std::size_t layers, Activation act) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = apply_linear(tape, prefix + ".l" + std::to_string(i), x);
    if (i + 1 < layers) x = activate(x, act);
  }
  return x;
}

Var zeros(Tape& tape, std::size_t rows, std::size_t cols) { return tape.constant(Tensor::matrix(rows, cols)); }

}  // namespace kunlun
