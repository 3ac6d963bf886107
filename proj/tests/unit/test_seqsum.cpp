#include "kunlun/seqsum.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace kunlun;
using testing::grad_rel_err;
using testing::naive_matmul;
using testing::randn;

namespace {

Tensor kron(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q) out(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return out;
}

}  // namespace

TEST_CASE("SumKronLinear equals its Kronecker-expanded dense matrix") {
  Rng rng(31);
  double worst = 0;
  for (std::size_t S = 1; S <= 4; ++S)
    for (std::size_t T = 1; T <= 4; ++T)
      for (std::size_t D = 1; D <= 4; ++D)
        for (std::size_t k = 1; k <= 3; ++k) {
          const Tensor x = randn(rng, S, D);
          std::vector<Tensor> zs, ws;
          Tensor dense = Tensor::matrix(T * D, S * D);
          for (std::size_t i = 0; i < k; ++i) {
            zs.push_back(randn(rng, S, T));
            ws.push_back(randn(rng, D, D));
            dense += kron(zs.back().transposed(), ws.back().transposed());
          }
          // Row-major vec: vec(Z^T X W) = (Z^T kron W^T) vec(X).
          const Tensor expect = naive_matmul(dense, x.reshaped({S * D, 1})).reshaped({T, D});
          Tape tape;
          std::vector<Var> z, w;
          for (std::size_t i = 0; i < k; ++i) {
            z.push_back(tape.constant(zs[i]));
            w.push_back(tape.constant(ws[i]));
          }
          const Tensor got = sumkronlinear(tape.constant(x), z, w).value();
          REQUIRE(got.rows() == T);
          worst = std::max(worst, max_abs_diff(got, expect));
          CHECK(sumkron_param_count(S, T, D, k) == k * (S * T + D * D));
        }
  CHECK(worst <= 1e-12);
  CHECK(sumkron_param_count(256, 32, 384, 8) == 1245184);
}

TEST_CASE("SumKronLinear shape errors") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(3, 2));
  CHECK_THROWS_AS(sumkronlinear(x, {}, {}), ShapeError);
  CHECK_THROWS_AS(sumkronlinear(x, {tape.constant(Tensor::matrix(2, 1))}, {tape.constant(Tensor::matrix(2, 2))}),
                  ShapeError);
}

TEST_CASE("summary split and config rules") {
  const SummarySplit s = SummarySplit::from_budget(8);
  CHECK(s.cls == 2);
  CHECK(s.hsp == 4);
  CHECK(s.recent == 2);
  CHECK(SummarySplit::from_budget(3).total() == 3);
  CHECK(SummarySplit::from_budget(1).hsp == 1);

  HspConfig c;
  c.heads = 2;
  c.split = s;
  c.seeds = 4;
  CHECK_THROWS_AS(c.validate(8), ValidationError);
  c.seeds = 5;
  CHECK_NOTHROW(c.validate(8));
  CHECK_THROWS_AS(c.validate(7), ValidationError);
  c.rank = 0;
  CHECK_THROWS_AS(c.validate(8), ValidationError);
  c.pma_only = true;
  CHECK_NOTHROW(c.validate(8));
}

TEST_CASE("recent rows keep the tail and front-pad short sequences") {
  Tape tape;
  const Tensor s = Tensor::from_rows({{1, 1}, {2, 2}, {3, 3}});
  const Tensor tail = recent_rows(tape, tape.constant(s), 2).value();
  CHECK(max_abs_diff(tail, s.row_slice(1, 3)) == 0.0);
  const Tensor padded = recent_rows(tape, tape.constant(s), 5).value();
  CHECK(padded.rows() == 5);
  CHECK(padded.row_slice(0, 2).max_abs() == 0.0);
  CHECK(max_abs_diff(padded.row_slice(2, 5), s) == 0.0);
  CHECK(recent_rows(tape, tape.constant(Tensor::matrix(0, 2)), 2).value().max_abs() == 0.0);
}

TEST_CASE("seed attention uses RMS-normalised seeds as queries") {
  Rng rng(12);
  const std::size_t d = 4;
  HspConfig cfg;
  cfg.heads = 2;
  cfg.split = {1, 2, 1};
  cfg.seeds = 3;
  ParamStore params;
  init_summary(params, "e", d, cfg, rng);
  params["e.hsp.norm_gain"] = randn(rng, 1, d);
  const Tensor s = randn(rng, 6, d);

  Tensor normed = params["e.hsp.seeds"];
  for (std::size_t r = 0; r < normed.rows(); ++r) {
    double ms = 0;
    for (std::size_t c = 0; c < d; ++c) ms += normed(r, c) * normed(r, c) / d;
    for (std::size_t c = 0; c < d; ++c) normed(r, c) *= params["e.hsp.norm_gain"][c] / std::sqrt(ms + 1e-6);
  }
  Tape tape(&params);
  const MhaParams attn = bind_mha(tape, "e.hsp.attn", cfg.heads);
  const Tensor expect = mha_attend(tape.constant(normed), tape.constant(s), attn).value();
  CHECK(max_abs_diff(hsp_seed_attend(tape, "e.hsp", tape.constant(s), cfg.heads).value(), expect) < 1e-13);

  const SummaryBundle b = hsp_summarize(tape, "e", tape.constant(s), cfg);
  CHECK(b.cls.rows() == 1);
  CHECK(b.hsp.rows() == 2);
  CHECK(b.recent.rows() == 1);
  CHECK(b.stacked().rows() == 4);
  // The class token is a learnable-query pooling of the sequence.
  const Tensor cls = pma(tape.constant(s), tape.param("e.cls.queries"), bind_mha(tape, "e.cls.attn", 2)).value();
  CHECK(max_abs_diff(b.cls.value(), cls) == 0.0);

  const SummaryBundle empty = hsp_summarize(tape, "e", tape.constant(Tensor::matrix(0, d)), cfg);
  CHECK(empty.stacked().value().max_abs() == 0.0);
}

TEST_CASE("pma-only variant swaps the hsp stage") {
  Rng rng(3);
  HspConfig cfg;
  cfg.split = {1, 2, 0};
  cfg.pma_only = true;
  ParamStore params;
  init_summary(params, "e", 4, cfg, rng);
  CHECK(params.count("e.pma.queries"));
  CHECK_FALSE(params.count("e.hsp.seeds"));
  Tape tape(&params);
  CHECK(hsp_summarize(tape, "e", tape.constant(randn(rng, 3, 4)), cfg).stacked().rows() == 3);
}

TEST_CASE("summary gradients") {
  Rng rng(41);
  const std::size_t d = 4;
  HspConfig cfg;
  cfg.heads = 2;
  cfg.split = {1, 2, 1};
  cfg.seeds = 3;
  ParamStore params;
  init_summary(params, "e", d, cfg, rng);
  const Tensor s = randn(rng, 5, d), w = randn(rng, 4, d);
  CHECK(grad_rel_err(
            {s},
            [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(hsp_summarize(t, "e", v[0], cfg).stacked(), w); },
            1e-6, &params) < 1e-7);
  const Tensor z = randn(rng, 5, 2), wk = randn(rng, d, d), ws = randn(rng, 2, d);
  CHECK(grad_rel_err({s, z, wk}, [&](Tape&, const std::vector<Var>& v) {
          return weighted_sum(sumkronlinear(v[0], {v[1], v[1]}, {v[2], v[2]}), ws);
        }) < 1e-7);
}
