#include "kunlun/ops.hpp"

#include <algorithm>
#include <cmath>

namespace kunlun {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ValidationError("op on an unbound Var");
  return *a.tape();
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "silu") return Activation::kSilu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSilu: return "silu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

double activate(Activation act, double x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0 ? x : 0.0;
    case Activation::kSilu: return x * sigmoid(x);
    case Activation::kTanh: return std::tanh(x);
    case Activation::kSigmoid: return sigmoid(x);
  }
  return x;
}

double activate_grad(Activation act, double x) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return x > 0 ? 1.0 : 0.0;
    case Activation::kSilu: {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::kSigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: inner extents differ, " + A.shape_str() + " x " + B.shape_str());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  detail::gemm(A.data(), B.data(), C.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push("matmul", std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& dC = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm_nt(dC.data(), t.value(ib).data(), t.grad_buffer(ia).data(), m, n, k, true);
    if (t.requires_grad(ib)) detail::gemm_tn(t.value(ia).data(), dC.data(), t.grad_buffer(ib).data(), k, m, n, true);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt: inner extents differ, " + A.shape_str() + " x " + B.shape_str() + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C = Tensor::matrix(m, n);
  detail::gemm_nt(A.data(), B.data(), C.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push("matmul_nt", std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& dC = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm(dC.data(), t.value(ib).data(), t.grad_buffer(ia).data(), m, n, k, true);
    if (t.requires_grad(ib)) detail::gemm_tn(dC.data(), t.value(ia).data(), t.grad_buffer(ib).data(), n, m, k, true);
  });
}

Var matmul_tn(Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rows() != B.rows()) throw ShapeError("matmul_tn: inner extents differ, " + A.shape_str() + "^T x " + B.shape_str());
  const std::size_t k = A.rows(), m = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  detail::gemm_tn(A.data(), B.data(), C.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push("matmul_tn", std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& dC = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm_nt(t.value(ib).data(), dC.data(), t.grad_buffer(ia).data(), k, n, m, true);
    if (t.requires_grad(ib)) detail::gemm(t.value(ia).data(), dC.data(), t.grad_buffer(ib).data(), k, m, n, true);
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tensor c = a.value() + b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).push("add", std::move(c), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    if (t.requires_grad(ia)) t.grad_buffer(ia) += t.grad(self);
    if (t.requires_grad(ib)) t.grad_buffer(ib) += t.grad(self);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tensor c = a.value() - b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).push("sub", std::move(c), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    if (t.requires_grad(ia)) t.grad_buffer(ia) += t.grad(self);
    if (t.requires_grad(ib)) t.grad_buffer(ib) -= t.grad(self);
  });
}

Var hadamard(Var a, Var b) {
  same_shape(a, b, "hadamard");
  Tensor c = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).push("hadamard", std::move(c), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      const Tensor& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const Tensor& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor c = a.value() * s;
  const std::size_t ia = a.id();
  return tape_of(a).push("scale", std::move(c), {a}, [ia, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols())
    throw ShapeError("add_row: " + R.shape_str() + " does not broadcast over " + A.shape_str());
  Tensor c = A;
  const std::size_t cols = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t j = 0; j < cols; ++j) c(r, j) += R[j];
  const std::size_t ia = a.id(), ir = row.id();
  return tape_of(a).push("add_row", std::move(c), {a, row}, [ia, ir, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ir)) {
      Tensor& gr = t.grad_buffer(ir);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g(r, j);
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Var y = matmul_nt(x, w);
  return b.valid() ? add_row(y, b) : y;
}

Var activate(Var a, Activation act) {
  if (act == Activation::kIdentity) return a;
  Tensor c = a.value();
  for (double& v : c.storage()) v = activate(act, v);
  const std::size_t ia = a.id();
  return tape_of(a).push("activate", std::move(c), {a}, [ia, act](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * activate_grad(act, x[i]);
  });
}

Var softmax_lastdim(Var a) {
  const Tensor& A = a.value();
  if (A.cols() < 1) throw ShapeError("softmax_lastdim: last extent must be >= 1");
  Tensor y = A;
  const std::size_t cols = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double* row = y.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) row[j] /= z;
  }
  const std::size_t ia = a.id();
  return tape_of(a).push("softmax", std::move(y), {a}, [ia, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g(r, j) * y(r, j);
      for (std::size_t j = 0; j < cols; ++j) ga(r, j) += y(r, j) * (g(r, j) - dot);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch " + p.value().shape_str());
    rows += p.rows();
  }
  Tensor c = Tensor::matrix(rows, cols);
  std::vector<std::size_t> ids, starts;
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), c.data() + at * cols);
    ids.push_back(p.id());
    starts.push_back(at);
    at += p.rows();
  }
  return tape_of(parts.front()).push("concat_rows", std::move(c), parts, [ids, starts, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      Tensor& gi = t.grad_buffer(ids[i]);
      const double* src = g.data() + starts[i] * cols;
      for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += src[j];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch " + p.value().shape_str());
    cols += p.cols();
  }
  Tensor c = Tensor::matrix(rows, cols);
  std::vector<std::size_t> ids, starts, widths;
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * v.cols(), v.cols(), c.data() + r * cols + at);
    ids.push_back(p.id());
    starts.push_back(at);
    widths.push_back(v.cols());
    at += v.cols();
  }
  return tape_of(parts.front())
      .push("concat_cols", std::move(c), parts, [ids, starts, widths, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!t.requires_grad(ids[i])) continue;
          Tensor& gi = t.grad_buffer(ids[i]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[i]; ++j) gi[r * widths[i] + j] += g[r * cols + starts[i] + j];
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tensor c = a.value().row_slice(begin, end);
  const std::size_t ia = a.id();
  const std::size_t cols = a.cols();
  return tape_of(a).push("slice_rows", std::move(c), {a}, [ia, begin, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    double* dst = ga.data() + begin * cols;
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tensor c = a.value().col_slice(begin, end);
  const std::size_t ia = a.id();
  const std::size_t cols = a.cols(), width = end - begin;
  return tape_of(a).push("slice_cols", std::move(c), {a}, [ia, begin, cols, width](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < width; ++j) ga[r * cols + begin + j] += g[r * width + j];
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tensor c = a.value().reshaped({rows, cols});
  const std::size_t ia = a.id();
  return tape_of(a).push("reshape", std::move(c), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
  });
}

Var transpose(Var a) {
  Tensor c = a.value().transposed();
  const std::size_t ia = a.id();
  return tape_of(a).push("transpose", std::move(c), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_buffer(ia) += t.grad(self).transposed();
  });
}

Var sum(Var a) {
  const std::size_t ia = a.id();
  return tape_of(a).push("sum", Tensor::scalar(a.value().sum()), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ia).storage()) v += g;
  });
}

Var sum_squares(Var a) {
  const std::size_t ia = a.id();
  return tape_of(a).push("sum_squares", Tensor::scalar(a.value().squared_norm()), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * g * x[i];
  });
}

Var weighted_sum(Var a, const Tensor& w) {
  if (w.size() != a.value().size()) throw ShapeError("weighted_sum: weight shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += a.value()[i] * w[i];
  const std::size_t ia = a.id();
  return tape_of(a).push("weighted_sum", Tensor::scalar(acc), {a}, [ia, w](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < w.size(); ++i) ga[i] += g * w[i];
  });
}

Var rms_norm_rows(Var a, Var gain, double eps) {
  const Tensor& X = a.value();
  const Tensor& G = gain.value();
  if (G.rows() != 1 || G.cols() != X.cols()) throw ShapeError("rms_norm_rows: gain must be 1 x " + std::to_string(X.cols()));
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor y = Tensor::matrix(rows, cols);
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < cols; ++j) ms += X(r, j) * X(r, j);
    inv_rms[r] = 1.0 / std::sqrt(ms / static_cast<double>(cols) + eps);
    for (std::size_t j = 0; j < cols; ++j) y(r, j) = X(r, j) * inv_rms[r] * G[j];
  }
  const std::size_t ia = a.id(), ig = gain.id();
  return tape_of(a).push("rms_norm", std::move(y), {a, gain}, [ia, ig, rows, cols, inv_rms](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& gain_v = t.value(ig);
    if (t.requires_grad(ig)) {
      Tensor& gg = t.grad_buffer(ig);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) gg[j] += g(r, j) * x(r, j) * inv_rms[r];
    }
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g(r, j) * gain_v[j] * x(r, j) * inv_rms[r];
        dot /= static_cast<double>(cols);
        for (std::size_t j = 0; j < cols; ++j) {
          const double xhat = x(r, j) * inv_rms[r];
          ga(r, j) += (g(r, j) * gain_v[j] - xhat * dot) * inv_rms[r];
        }
      }
    }
  });
}

Var gather_rows(Var table, std::span<const std::uint32_t> ids) {
  const Tensor& T = table.value();
  const std::size_t cols = T.cols();
  Tensor out = Tensor::matrix(ids.size(), cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows())
      throw ValidationError("embedding id " + std::to_string(ids[i]) + " out of vocabulary of size " +
                            std::to_string(T.rows()));
    std::copy_n(T.data() + ids[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return tape_of(table).push("gather_rows", std::move(out), {table}, [it, idv, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad_buffer(it);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) gt[idv[i] * cols + j] += g[i * cols + j];
  });
}

Var upper_triangle(Var square) {
  const Tensor& S = square.value();
  if (S.rows() != S.cols()) throw ShapeError("upper_triangle: matrix must be square, got " + S.shape_str());
  const std::size_t n = S.rows();
  Tensor out = Tensor::matrix(1, n * (n + 1) / 2);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) out[k++] = S(i, j);
  const std::size_t is = square.id();
  return tape_of(square).push("upper_triangle", std::move(out), {square}, [is, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gs = t.grad_buffer(is);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) gs[i * n + j] += g[k++];
  });
}

Var bce_with_logits(Var logit, double label) {
  const double z = logit.value().item();
  const double loss = std::max(z, 0.0) - label * z + std::log1p(std::exp(-std::abs(z)));
  const std::size_t il = logit.id();
  return tape_of(logit).push("bce_with_logits", Tensor::scalar(loss), {logit}, [il, z, label](Tape& t, std::size_t self) {
    t.grad_buffer(il)[0] += t.grad(self)[0] * (sigmoid(z) - label);
  });
}

}  // namespace kunlun
