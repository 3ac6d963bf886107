#include "kunlun/attention.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace kunlun;
using testing::grad_rel_err;
using testing::naive_matmul;
using testing::randn;

namespace {

// Dense reference: full T x T scores with out-of-band entries masked to -inf.
Tensor masked_attention_oracle(const Tensor& s, const ParamStore& p, std::size_t heads, std::size_t w, bool causal,
                               bool residual = true) {
  const std::size_t T = s.rows(), d = s.cols(), dh = d / heads;
  const Tensor q = naive_matmul(s, p.at("a.wq").transposed());
  const Tensor k = naive_matmul(s, p.at("a.wk").transposed());
  const Tensor v = naive_matmul(s, p.at("a.wv").transposed());
  Tensor o = Tensor::matrix(T, d);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor scores = Tensor::matrix(T, T);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j) {
        const bool visible = (i > j ? i - j : j - i) <= w && !(causal && j > i);
        double acc = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) acc += q(i, c) * k(j, c);
        scores(i, j) = visible ? acc / std::sqrt(double(dh)) : -INFINITY;
      }
    const Tensor prob = testing::naive_softmax_rows(scores);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) o(i, c) += prob(i, j) * v(j, c);
  }
  Tensor out = naive_matmul(o, p.at("a.wo").transposed());
  if (residual) out += s;
  return out;
}

struct Fixture {
  ParamStore params;
  Rng rng{23};
  std::size_t d = 8, heads = 2;
  Fixture() { init_mha(params, "a", d, rng); }
};

}  // namespace

TEST_CASE("window attention equals a dense masked oracle") {
  Fixture f;
  const std::size_t T = 9;
  const Tensor s = randn(f.rng, T, f.d);
  Tape tape(&f.params);
  const MhaParams p = bind_mha(tape, "a", f.heads);
  for (std::size_t w : {0, 1, 3, 8, 20})
    for (bool causal : {false, true}) {
      const Tensor got = mha_window(tape.constant(s), p, {w, causal}).value();
      CHECK(max_abs_diff(got, masked_attention_oracle(s, f.params, f.heads, w, causal)) < 1e-12);
    }
  CHECK(max_abs_diff(mha_full(tape.constant(s), p).value(), masked_attention_oracle(s, f.params, f.heads, T, false)) <
        1e-12);
}

TEST_CASE("a window covering the sequence reduces to full attention") {
  Fixture f;
  Tape tape(&f.params);
  const MhaParams p = bind_mha(tape, "a", f.heads);
  for (std::size_t T : {1, 2, 5, 16}) {
    const Tensor s = randn(f.rng, T, f.d);
    const Tensor full = mha_full(tape.constant(s), p).value();
    for (std::size_t w : {T - 1, T, T + 7}) CHECK(max_abs_diff(mha_window(tape.constant(s), p, {w}).value(), full) < 1e-12);
  }
}

TEST_CASE("band pair count matches brute force and drives the cost ratio") {
  for (std::size_t T : {1, 2, 7, 64})
    for (std::size_t w : {0, 1, 3, 8, 100})
      for (bool causal : {false, true}) {
        std::uint64_t brute = 0;
        for (std::size_t i = 0; i < T; ++i)
          for (std::size_t j = 0; j < T; ++j)
            if ((i > j ? i - j : j - i) <= w && !(causal && j > i)) ++brute;
        const WindowSpec win{w, causal};
        CHECK(band_pairs(T, win) == brute);
        // The score/value terms scale with the band; projections do not.
        const std::size_t d = 16;
        const std::uint64_t proj = 4ull * T * d * d;
        const std::uint64_t windowed = self_attention_macs(T, d, band_pairs(T, win)) - proj;
        const std::uint64_t full = self_attention_macs(T, d, band_pairs(T, {T})) - proj;
        CHECK(windowed * (std::uint64_t(T) * T) == full * brute);
      }
  // 64 rows, half-width 8: 64 * 17 minus the clipped corners 2 * (8 + 7 + ... + 1).
  CHECK(band_pairs(64, {8}) == 64 * 17 - 2 * 36);
}

TEST_CASE("attention padding rows pass through") {
  Fixture f;
  const Tensor s = randn(f.rng, 6, f.d);
  Tape tape(&f.params);
  const MhaParams p = bind_mha(tape, "a", f.heads);
  const Tensor w = mha_window(tape.constant(s), p, {2}, 4).value();
  const Tensor full = mha_full(tape.constant(s), p, 4).value();
  CHECK(max_abs_diff(w.row_slice(4, 6), s.row_slice(4, 6)) == 0.0);
  CHECK(max_abs_diff(full.row_slice(4, 6), s.row_slice(4, 6)) == 0.0);
  CHECK(max_abs_diff(full.row_slice(0, 4), mha_full(tape.constant(s.row_slice(0, 4)), p).value()) < 1e-14);
  CHECK(max_abs_diff(mha_full(tape.constant(s), p, 0).value(), s) == 0.0);
  CHECK_THROWS_AS(mha_full(tape.constant(s), p, 7), ShapeError);
}

TEST_CASE("cross attention with an empty key set is zero") {
  Fixture f;
  Tape tape(&f.params);
  const MhaParams p = bind_mha(tape, "a", f.heads);
  const Tensor out = mha_attend(tape.constant(randn(f.rng, 3, f.d)), tape.constant(Tensor::matrix(0, f.d)), p).value();
  CHECK(out.rows() == 3);
  CHECK(out.max_abs() == 0.0);
  CHECK(cross_attention_macs(3, 0, 8) == 0);
  CHECK_THROWS_AS(bind_mha(tape, "a", 3), ValidationError);
  CHECK_THROWS_AS(mha_attend(tape.constant(Tensor::matrix(1, 4)), tape.constant(Tensor::matrix(1, 8)), p), ShapeError);
}

TEST_CASE("attention gradients") {
  Fixture f;
  const Tensor s = randn(f.rng, 5, f.d), w = randn(f.rng, 5, f.d);
  for (int mode = 0; mode < 3; ++mode) {
    const double err = grad_rel_err(
        {s},
        [&](Tape& t, const std::vector<Var>& v) {
          const MhaParams p = bind_mha(t, "a", f.heads);
          Var out = mode == 0 ? mha_full(v[0], p) : mha_window(v[0], p, {1, mode == 2});
          return weighted_sum(out, w);
        },
        1e-6, &f.params);
    CHECK(err < 1e-7);
  }
}
