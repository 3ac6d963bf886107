#include "kunlun/ops.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace kunlun;
using testing::grad_rel_err;
using testing::naive_matmul;
using testing::randn;

TEST_CASE("gemm kernels agree with a naive product at small and blocked sizes") {
  Rng rng(3);
  for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 2}, {7, 1, 9}, {40, 48, 33}}) {
    const Tensor a = randn(rng, m, k), b = randn(rng, k, n);
    const Tensor ref = naive_matmul(a, b);
    CHECK(max_abs_diff(matmul(a, b), ref) < 1e-12);

    Tensor c = Tensor::matrix(m, n);
    const Tensor bt = b.transposed(), at = a.transposed();
    detail::gemm_nt(a.data(), bt.data(), c.data(), m, k, n);
    CHECK(max_abs_diff(c, ref) < 1e-12);
    detail::gemm_tn(at.data(), b.data(), c.data(), m, k, n);
    CHECK(max_abs_diff(c, ref) < 1e-12);
    detail::gemm(a.data(), b.data(), c.data(), m, k, n, true);
    CHECK(max_abs_diff(c, ref * 2.0) < 1e-11);
  }
}

TEST_CASE("gemm with an empty inner dimension zeroes or keeps the output") {
  Tensor c = Tensor::matrix(2, 2, 5.0);
  detail::gemm(nullptr, nullptr, c.data(), 2, 0, 2, true);
  CHECK(c.sum() == 20.0);
  detail::gemm(nullptr, nullptr, c.data(), 2, 0, 2);
  CHECK(c.sum() == 0.0);
}

TEST_CASE("tensor shape errors") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(Tensor::matrix(2, 3).reshaped({4, 2}), ShapeError);
  Tensor a = Tensor::matrix(1, 2);
  CHECK_THROWS_AS(a += Tensor::matrix(2, 1), ShapeError);
}

TEST_CASE("jagged batches pad and unpad losslessly") {
  Rng rng(5);
  const std::vector<Tensor> parts{randn(rng, 3, 2), Tensor::matrix(0, 2), randn(rng, 1, 2)};
  const JaggedBatch jb = JaggedBatch::from_samples(parts, 2);
  CHECK(jb.offsets == std::vector<std::size_t>{0, 3, 3, 4});
  CHECK(jb.max_length() == 3);
  for (PadAlign align : {PadAlign::kLeft, PadAlign::kRight}) {
    const PaddedBatch pb = pad(jb, 4, align, -1.0);
    CHECK(pb.values.rows() == 12);
    const JaggedBatch back = unpad(pb);
    CHECK(back.offsets == jb.offsets);
    CHECK(max_abs_diff(back.values, jb.values) == 0.0);
  }
  // Right alignment puts the real rows last.
  const PaddedBatch right = pad(jb, 4, PadAlign::kRight, -1.0);
  CHECK(right.values(0, 0) == -1.0);
  CHECK(right.values(3, 1) == parts[0](2, 1));
  CHECK_THROWS_AS(pad(jb, 2), ValidationError);

  JaggedBatch bad = jb;
  bad.offsets = {0, 2, 1, 4};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = jb;
  bad.timestamps = std::vector<double>{1, 2, 0, 5};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("activations match their closed forms") {
  for (double x : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
    const double sig = 1 / (1 + std::exp(-x));
    CHECK(activate(Activation::kSigmoid, x) == doctest::Approx(sig).epsilon(1e-14));
    CHECK(activate(Activation::kSilu, x) == doctest::Approx(x * sig).epsilon(1e-14));
    CHECK(activate(Activation::kRelu, x) == (x > 0 ? x : 0.0));
    CHECK(activate(Activation::kTanh, x) == doctest::Approx(std::tanh(x)));
    for (Activation a : {Activation::kSigmoid, Activation::kSilu, Activation::kTanh, Activation::kIdentity}) {
      const double h = 1e-6;
      const double num = (activate(a, x + h) - activate(a, x - h)) / (2 * h);
      CHECK(activate_grad(a, x) == doctest::Approx(num).epsilon(1e-7));
    }
  }
  CHECK(parse_activation("silu") == Activation::kSilu);
  CHECK(to_string(Activation::kTanh) == "tanh");
  CHECK_THROWS_AS(parse_activation("gelu"), ValidationError);
}

TEST_CASE("op gradients match central differences") {
  Rng rng(11);
  const Tensor a = randn(rng, 3, 4), b = randn(rng, 4, 2), c = randn(rng, 3, 4), w = randn(rng, 3, 2);
  const Tensor row = randn(rng, 1, 4), sq = randn(rng, 3, 3), gain = randn(rng, 1, 4);
  const double tol = 1e-7;

  CHECK(grad_rel_err({a, b}, [&](Tape&, const std::vector<Var>& v) { return weighted_sum(matmul(v[0], v[1]), w); }) <
        tol);
  CHECK(grad_rel_err({a, c}, [&](Tape&, const std::vector<Var>& v) { return sum_squares(matmul_nt(v[0], v[1])); }) <
        tol);
  CHECK(grad_rel_err({a, c}, [&](Tape&, const std::vector<Var>& v) { return sum_squares(matmul_tn(v[0], v[1])); }) <
        tol);
  CHECK(grad_rel_err({a, c},
                     [&](Tape&, const std::vector<Var>& v) {
                       return sum_squares(hadamard(add(v[0], v[1]), sub(v[0], scale(v[1], 0.3))));
                     }) < tol);
  CHECK(grad_rel_err({a, row}, [&](Tape&, const std::vector<Var>& v) { return sum_squares(add_row(v[0], v[1])); }) <
        tol);
  CHECK(grad_rel_err({a, randn(rng, 2, 4), randn(rng, 1, 2)},
                     [&](Tape&, const std::vector<Var>& v) { return weighted_sum(linear(v[0], v[1], v[2]), w); }) <
        tol);
  for (Activation act : {Activation::kSilu, Activation::kTanh, Activation::kSigmoid, Activation::kIdentity})
    CHECK(grad_rel_err({a}, [&](Tape&, const std::vector<Var>& v) { return sum_squares(activate(v[0], act)); }) <
          tol);
  CHECK(grad_rel_err({a}, [&](Tape&, const std::vector<Var>& v) {
          return weighted_sum(softmax_lastdim(v[0]), c);
        }) < tol);
  CHECK(grad_rel_err({a, c},
                     [&](Tape&, const std::vector<Var>& v) {
                       return sum_squares(concat_cols({concat_rows({v[0], v[1]}), concat_rows({v[1], v[0]})}));
                     }) < tol);
  CHECK(grad_rel_err({a},
                     [&](Tape&, const std::vector<Var>& v) {
                       return weighted_sum(slice_cols(slice_rows(v[0], 1, 3), 1, 3), Tensor::matrix(2, 2, 0.5)) +
                              sum_squares(transpose(reshape(v[0], 6, 2)));
                     }) < tol);
  CHECK(grad_rel_err({a, gain},
                     [&](Tape&, const std::vector<Var>& v) { return weighted_sum(rms_norm_rows(v[0], v[1]), c); }) <
        tol);
  CHECK(grad_rel_err({sq}, [&](Tape&, const std::vector<Var>& v) {
          return sum_squares(upper_triangle(v[0]));
        }) < tol);
  const std::vector<std::uint32_t> ids{2, 0, 2};
  CHECK(grad_rel_err({a}, [&](Tape&, const std::vector<Var>& v) {
          return weighted_sum(gather_rows(v[0], ids), c);
        }) < tol);
  for (double label : {0.0, 1.0})
    CHECK(grad_rel_err({Tensor::scalar(0.8)}, [&](Tape&, const std::vector<Var>& v) {
            return bce_with_logits(v[0], label);
          }) < tol);
}

TEST_CASE("bce with logits is stable at extreme logits") {
  Tape tape;
  CHECK(bce_with_logits(tape.constant(Tensor::scalar(800.0)), 0.0).value().item() == doctest::Approx(800.0));
  CHECK(bce_with_logits(tape.constant(Tensor::scalar(-800.0)), 0.0).value().item() == doctest::Approx(0.0));
  const double z = 0.3;
  CHECK(bce_with_logits(tape.constant(Tensor::scalar(z)), 1.0).value().item() ==
        doctest::Approx(-std::log(1 / (1 + std::exp(-z)))).epsilon(1e-14));
}

TEST_CASE("tape bookkeeping") {
  ParamStore params{{"w", Tensor::from_rows({{1, 2}, {3, 4}})}, {"unused", Tensor::matrix(1, 1)}};
  Tape tape(&params);
  Var w = tape.param("w");
  CHECK(tape.param("w").id() == w.id());
  CHECK(tape.has_param("w"));
  CHECK_THROWS_AS(tape.param("missing"), ValidationError);
  const GradStore g = tape.backward(sum_squares(w));
  CHECK(g.at("w")(1, 1) == 8.0);
  CHECK(g.at("unused").sum() == 0.0);

  Tape other;
  Var x = other.constant(Tensor::matrix(2, 2));
  CHECK_THROWS_AS(add(w, x), ValidationError);
  CHECK_THROWS_AS(tape.backward(w), ValidationError);

  Tape frozen(&params, false);
  Var y = sum(frozen.param("w"));
  CHECK(y.value().item() == 10.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("non-finite results raise NumericalError") {
  Tape tape;
  Var x = tape.constant(Tensor::scalar(1e300));
  CHECK_THROWS_AS(hadamard(x, x), NumericalError);
}

TEST_CASE("rng is reproducible and normal draws have unit scale") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  Rng r(1);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.03);
  CHECK(std::abs(s2 / n - 1) < 0.05);
}
