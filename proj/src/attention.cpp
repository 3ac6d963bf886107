#include "kunlun/attention.hpp"

#include <algorithm>
#include <cmath>

namespace kunlun {

void init_mha(ParamStore& params, const std::string& prefix, std::size_t d, Rng& rng, double out_gain) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  params[prefix + ".wq"] = rng.normal_tensor(d, d, s);
  params[prefix + ".wk"] = rng.normal_tensor(d, d, s);
  params[prefix + ".wv"] = rng.normal_tensor(d, d, s);
  params[prefix + ".wo"] = rng.normal_tensor(d, d, s * out_gain);
}

MhaParams bind_mha(Tape& tape, const std::string& prefix, std::size_t heads) {
  MhaParams p{tape.param(prefix + ".wq"), tape.param(prefix + ".wk"), tape.param(prefix + ".wv"),
              tape.param(prefix + ".wo"), heads};
  if (heads == 0 || p.dim() % heads != 0)
    throw ValidationError("attention '" + prefix + "': dim " + std::to_string(p.dim()) + " not divisible by " +
                          std::to_string(heads) + " heads");
  return p;
}

Var mha_attend(Var queries, Var kv, const MhaParams& p) {
  Tape& tape = *queries.tape();
  const std::size_t d = p.dim();
  if (queries.cols() != d || kv.cols() != d)
    throw ShapeError("mha_attend: inputs must be ... x " + std::to_string(d));
  if (kv.rows() == 0) return zeros(tape, queries.rows(), d);
  const std::size_t dh = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = matmul_nt(queries, p.wq);
  Var k = matmul_nt(kv, p.wk);
  Var v = matmul_nt(kv, p.wv);
  std::vector<Var> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var qh = p.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = p.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = p.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Var attn = softmax_lastdim(scale(matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(matmul(attn, vh));
  }
  Var o = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return matmul_nt(o, p.wo);
}

namespace {

template <typename Body>
Var with_padding(Var s, std::size_t valid, Body body) {
  const std::size_t T = s.rows();
  if (valid > T) throw ShapeError("valid length exceeds sequence rows");
  if (valid == 0) return s;
  if (valid == T) return body(s);
  Var head = body(slice_rows(s, 0, valid));
  return concat_rows({head, slice_rows(s, valid, T)});
}

// Keys visible to query t.
std::pair<std::size_t, std::size_t> window_of(std::size_t t, std::size_t T, WindowSpec win) {
  const std::size_t lo = t >= win.w ? t - win.w : 0;
  const std::size_t hi = win.causal ? t : std::min(T - 1, t + win.w);
  return {lo, hi};
}

// Banded softmax attention over pre-projected Q, K, V (all T x d, heads as
// column blocks). Probabilities are kept per band for the backward pass.
Var banded_attention(Var q, Var k, Var v, std::size_t heads, WindowSpec win) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t T = Q.rows(), d = Q.cols(), dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<std::size_t> band_start(T + 1, 0);
  for (std::size_t t = 0; t < T; ++t) {
    auto [lo, hi] = window_of(t, T, win);
    band_start[t + 1] = band_start[t] + (hi - lo + 1);
  }
  std::vector<double> probs(band_start[T] * heads);
  Tensor out = Tensor::matrix(T, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t t = 0; t < T; ++t) {
      auto [lo, hi] = window_of(t, T, win);
      double* p = probs.data() + (band_start[t] * heads) + h * (hi - lo + 1);
      double mx = -INFINITY;
      for (std::size_t j = lo; j <= hi; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q(t, c0 + c) * K(j, c0 + c);
        p[j - lo] = s * inv_sqrt;
        mx = std::max(mx, p[j - lo]);
      }
      double z = 0.0;
      for (std::size_t j = lo; j <= hi; ++j) z += (p[j - lo] = std::exp(p[j - lo] - mx));
      for (std::size_t j = lo; j <= hi; ++j) {
        p[j - lo] /= z;
        for (std::size_t c = 0; c < dh; ++c) out(t, c0 + c) += p[j - lo] * V(j, c0 + c);
      }
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->push(
      "banded_attention", std::move(out), {q, k, v},
      [iq, ik, iv, heads, win, T, d, dh, inv_sqrt, band_start, probs](Tape& tp, std::size_t self) {
        const Tensor& dO = tp.grad(self);
        const Tensor& Q = tp.value(iq);
        const Tensor& K = tp.value(ik);
        const Tensor& V = tp.value(iv);
        Tensor dQ = Tensor::matrix(T, d), dK = Tensor::matrix(T, d), dV = Tensor::matrix(T, d);
        std::vector<double> dp;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t t = 0; t < T; ++t) {
            auto [lo, hi] = window_of(t, T, win);
            const double* p = probs.data() + (band_start[t] * heads) + h * (hi - lo + 1);
            dp.assign(hi - lo + 1, 0.0);
            double dot = 0.0;
            for (std::size_t j = lo; j <= hi; ++j) {
              double g = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                g += dO(t, c0 + c) * V(j, c0 + c);
                dV(j, c0 + c) += p[j - lo] * dO(t, c0 + c);
              }
              dp[j - lo] = g;
              dot += g * p[j - lo];
            }
            for (std::size_t j = lo; j <= hi; ++j) {
              const double ds = p[j - lo] * (dp[j - lo] - dot) * inv_sqrt;
              for (std::size_t c = 0; c < dh; ++c) {
                dQ(t, c0 + c) += ds * K(j, c0 + c);
                dK(j, c0 + c) += ds * Q(t, c0 + c);
              }
            }
          }
        }
        if (tp.requires_grad(iq)) tp.grad_buffer(iq) += dQ;
        if (tp.requires_grad(ik)) tp.grad_buffer(ik) += dK;
        if (tp.requires_grad(iv)) tp.grad_buffer(iv) += dV;
      });
}

}  // namespace

Var mha_full(Var s, const MhaParams& p, std::size_t valid) {
  return with_padding(s, valid, [&](Var x) { return add(mha_attend(x, x, p), x); });
}

Var mha_full(Var s, const MhaParams& p) { return mha_full(s, p, s.rows()); }

Var mha_window(Var s, const MhaParams& p, WindowSpec win, std::size_t valid) {
  if (s.cols() != p.dim()) throw ShapeError("mha_window: sequence width does not match attention dim");
  return with_padding(s, valid, [&](Var x) {
    Var q = matmul_nt(x, p.wq);
    Var k = matmul_nt(x, p.wk);
    Var v = matmul_nt(x, p.wv);
    Var o = banded_attention(q, k, v, p.heads, win);
    return add(matmul_nt(o, p.wo), x);
  });
}

Var mha_window(Var s, const MhaParams& p, WindowSpec win) { return mha_window(s, p, win, s.rows()); }

std::uint64_t band_pairs(std::size_t T, WindowSpec win) {
  std::uint64_t pairs = 0;
  for (std::size_t t = 0; t < T; ++t) {
    auto [lo, hi] = window_of(t, T, win);
    pairs += hi - lo + 1;
  }
  return pairs;
}

std::uint64_t self_attention_macs(std::size_t T, std::size_t d, std::uint64_t pairs) {
  return 4ull * T * d * d + 2ull * pairs * d;
}

std::uint64_t cross_attention_macs(std::size_t nq, std::size_t T, std::size_t d) {
  if (T == 0) return 0;
  return 2ull * nq * d * d + 2ull * T * d * d + 2ull * nq * T * d;
}

}  // namespace kunlun
