#pragma once

#include "kunlun/layers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testing {

using kunlun::Tape;
using kunlun::Tensor;
using kunlun::Var;

inline Tensor randn(kunlun::Rng& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
  return rng.normal_tensor(rows, cols, sd);
}

inline double rel_err(const Tensor& a, const Tensor& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reverse-mode gradients of `loss` w.r.t. leaf inputs against central
// differences; returns the worst per-input relative error. Parameters in
// `params` are available to the loss but are not checked.
inline double grad_rel_err(const std::vector<Tensor>& inputs, const LossFn& loss, double h = 1e-6,
                           const kunlun::ParamStore* params = nullptr) {
  std::vector<Tensor> analytic;
  {
    Tape tape(params);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    tape.backward(loss(tape, vars));
    for (const Var& v : vars) {
      const Tensor& g = tape.grad(v.id());
      analytic.push_back(g.empty() ? Tensor::matrix(v.rows(), v.cols()) : g);
    }
  }
  std::vector<Tensor> xs = inputs;
  auto eval = [&] {
    Tape tape(params, false);
    std::vector<Var> vars;
    for (const Tensor& t : xs) vars.push_back(tape.constant(t));
    return loss(tape, vars).value().item();
  };
  double worst = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    Tensor numeric = Tensor::matrix(xs[k].rows(), xs[k].cols());
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double x = xs[k][i];
      xs[k][i] = x + h;
      const double up = eval();
      xs[k][i] = x - h;
      const double down = eval();
      xs[k][i] = x;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, rel_err(analytic[k], numeric));
  }
  return worst;
}

// Naive triple-loop product for checking the optimized kernels.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Tensor naive_softmax_rows(Tensor a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, a(i, j));
    double z = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) z += (a(i, j) = std::exp(a(i, j) - m));
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) /= z;
  }
  return a;
}

}  // namespace testing
