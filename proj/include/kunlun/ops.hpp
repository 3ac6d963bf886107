#pragma once

#include "kunlun/autodiff.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kunlun {

enum class Activation { kIdentity, kRelu, kSilu, kTanh, kSigmoid };

Activation parse_activation(std::string_view name);
std::string to_string(Activation act);
double activate(Activation act, double x);
/// d act(x) / dx evaluated at the pre-activation x.
double activate_grad(Activation act, double x);

// Differentiable ops. All operands are rank-2 and must live on the same tape.
Var matmul(Var a, Var b);     // a . b
Var matmul_nt(Var a, Var b);  // a . b^T
Var matmul_tn(Var a, Var b);  // a^T . b
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
/// x . w^T + b, with w stored out x in and b as 1 x out (optional).
Var linear(Var x, Var w, Var b = Var());
Var activate(Var a, Activation act);
Var softmax_lastdim(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var transpose(Var a);
Var sum(Var a);
Var sum_squares(Var a);
/// sum(a .* w) for a fixed weight tensor; a generic linear functional for checks.
Var weighted_sum(Var a, const Tensor& w);
/// Row-wise RMS normalisation with a learnable 1 x c gain.
Var rms_norm_rows(Var a, Var gain, double eps = 1e-6);
/// Embedding lookup: one row of `table` per id.
Var gather_rows(Var table, std::span<const std::uint32_t> ids);
/// Upper triangle (diagonal included) of a square matrix, row-major, as 1 x n(n+1)/2.
Var upper_triangle(Var square);
/// Numerically stable binary cross-entropy on a 1 x 1 logit.
Var bce_with_logits(Var logit, double label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }

}  // namespace kunlun
