#include "kunlun/gdpa.hpp"

#include <algorithm>
#include <cmath>

namespace kunlun {

void GdpaConfig::validate(std::size_t d) const {
  if (heads < 1) throw ValidationError("GDPA needs at least one head");
  if (d % heads != 0)
    throw ValidationError("GDPA dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (n_kv < 1) throw ValidationError("GDPA needs n_kv >= 1");
  if (!(tau > 0)) throw ValidationError("GDPA temperature must be > 0");
  if (activations.empty()) throw ValidationError("GDPA activation palette is empty");
}

Var summarize_nonseq(Var x, Var pool) {
  if (pool.cols() != x.rows())
    throw ShapeError("summarize: pooling " + pool.value().shape_str() + " does not match " + x.value().shape_str());
  return matmul(pool, x);
}

void init_summarize(ParamStore& params, const std::string& name, std::size_t n_sum, std::size_t tokens, Rng& rng) {
  if (n_sum < 1 || n_sum > tokens)
    throw ValidationError("summary size " + std::to_string(n_sum) + " must be in [1, " + std::to_string(tokens) + "]");
  Tensor p = rng.normal_tensor(n_sum, tokens, 0.1 / std::sqrt(static_cast<double>(tokens)));
  for (std::size_t r = 0; r < n_sum; ++r)
    for (std::size_t c = 0; c < tokens; ++c) p(r, c) += 1.0 / static_cast<double>(tokens);
  params[name] = std::move(p);
}

void init_weight_gen(ParamStore& params, const std::string& prefix, std::size_t n_sum, std::size_t d_in,
                     std::size_t d, std::size_t n_kv, Rng& rng) {
  init_linear(params, prefix + ".k", n_sum * d_in, n_kv * d, rng);
  init_linear(params, prefix + ".v", n_sum * d_in, n_kv * d, rng);
}

GeneratedKv generate_kv(Tape& tape, const std::string& prefix, Var x_sum, std::size_t n_kv, std::size_t d) {
  Var flat = reshape(x_sum, 1, x_sum.rows() * x_sum.cols());
  return {reshape(apply_linear(tape, prefix + ".k", flat), n_kv, d),
          reshape(apply_linear(tape, prefix + ".v", flat), n_kv, d)};
}

void init_gdpa(ParamStore& params, const std::string& prefix, std::size_t d, Rng& rng, double out_gain) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  params[prefix + ".wq"] = rng.normal_tensor(d, d, s);
  params[prefix + ".wo"] = rng.normal_tensor(d, d, s * out_gain);
}

namespace {

void check_kv(Var s, const GeneratedKv& kv, const GdpaConfig& cfg) {
  const std::size_t d = s.cols();
  cfg.validate(d);
  if (kv.keys.rows() != cfg.n_kv || kv.keys.cols() != d || kv.values.rows() != cfg.n_kv || kv.values.cols() != d)
    throw ShapeError("GDPA: generated keys/values must be " + std::to_string(cfg.n_kv) + " x " + std::to_string(d));
}

template <typename Body>
Var on_valid_rows(Var s, std::size_t valid, Body body) {
  const std::size_t T = s.rows();
  if (valid > T) throw ShapeError("GDPA: valid length exceeds sequence rows");
  if (valid == 0) return s;
  if (valid == T) return body(s);
  return concat_rows({body(slice_rows(s, 0, valid)), slice_rows(s, valid, T)});
}

void copy_block(const Tensor& src, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1, double* dst) {
  const std::size_t w = c1 - c0;
  for (std::size_t r = r0; r < r1; ++r) std::copy_n(src.data() + r * src.cols() + c0, w, dst + (r - r0) * w);
}

void add_block(Tensor& dst, std::size_t r0, std::size_t r1, std::size_t c0, const double* src, std::size_t w) {
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = 0; c < w; ++c) dst(r, c0 + c) += src[(r - r0) * w + c];
}

// Tiled Act_h(Q_h K_h^T / tau) V_h for all heads, heads laid out as column
// blocks. At most one rows x kv score tile is alive at a time.
Var gdpa_tiles(Var q, Var k, Var v, const GdpaConfig& cfg, TileSize tile) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t T = Q.rows(), d = Q.cols(), n_kv = K.rows(), dh = d / cfg.heads;
  const double inv_tau = 1.0 / cfg.tau;
  const std::size_t bt = std::min(tile.rows, T), bk = std::min(tile.kv, n_kv);

  Tensor out = Tensor::matrix(T, d);
  std::vector<double> qt, kt, vt, st, ot;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Activation act = cfg.activation(h);
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    for (std::size_t r0 = 0; r0 < T; r0 += bt) {
      const std::size_t r1 = std::min(T, r0 + bt), nr = r1 - r0;
      qt.resize(nr * dh);
      copy_block(Q, r0, r1, c0, c1, qt.data());
      ot.assign(nr * dh, 0.0);
      for (std::size_t k0 = 0; k0 < n_kv; k0 += bk) {
        const std::size_t k1 = std::min(n_kv, k0 + bk), nk = k1 - k0;
        kt.resize(nk * dh);
        vt.resize(nk * dh);
        st.resize(nr * nk);
        copy_block(K, k0, k1, c0, c1, kt.data());
        copy_block(V, k0, k1, c0, c1, vt.data());
        detail::gemm_nt(qt.data(), kt.data(), st.data(), nr, dh, nk);
        for (double& x : st) x = activate(act, x * inv_tau);
        detail::gemm(st.data(), vt.data(), ot.data(), nr, nk, dh, k0 != 0);
      }
      add_block(out, r0, r1, c0, ot.data(), dh);
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->push(
      "gdpa_tiles", std::move(out), {q, k, v},
      [iq, ik, iv, cfg, T, d, n_kv, dh, bt, bk, inv_tau](Tape& tp, std::size_t self) {
        const Tensor& dO = tp.grad(self);
        const Tensor& Q = tp.value(iq);
        const Tensor& K = tp.value(ik);
        const Tensor& V = tp.value(iv);
        Tensor dQ = Tensor::matrix(T, d), dK = Tensor::matrix(n_kv, d), dV = Tensor::matrix(n_kv, d);
        std::vector<double> qt, kt, vt, pre, a, dot, da, dqt, dkt, dvt;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
          const Activation act = cfg.activation(h);
          const std::size_t c0 = h * dh, c1 = c0 + dh;
          for (std::size_t r0 = 0; r0 < T; r0 += bt) {
            const std::size_t r1 = std::min(T, r0 + bt), nr = r1 - r0;
            qt.resize(nr * dh);
            dot.resize(nr * dh);
            copy_block(Q, r0, r1, c0, c1, qt.data());
            copy_block(dO, r0, r1, c0, c1, dot.data());
            dqt.assign(nr * dh, 0.0);
            for (std::size_t k0 = 0; k0 < n_kv; k0 += bk) {
              const std::size_t k1 = std::min(n_kv, k0 + bk), nk = k1 - k0;
              kt.resize(nk * dh);
              vt.resize(nk * dh);
              pre.resize(nr * nk);
              a.resize(nr * nk);
              da.resize(nr * nk);
              copy_block(K, k0, k1, c0, c1, kt.data());
              copy_block(V, k0, k1, c0, c1, vt.data());
              // Recompute the tile's scores.
              detail::gemm_nt(qt.data(), kt.data(), pre.data(), nr, dh, nk);
              for (std::size_t i = 0; i < pre.size(); ++i) {
                pre[i] *= inv_tau;
                a[i] = activate(act, pre[i]);
              }
              dvt.assign(nk * dh, 0.0);
              detail::gemm_tn(a.data(), dot.data(), dvt.data(), nk, nr, dh);
              add_block(dV, k0, k1, c0, dvt.data(), dh);
              detail::gemm_nt(dot.data(), vt.data(), da.data(), nr, dh, nk);
              for (std::size_t i = 0; i < da.size(); ++i) da[i] *= activate_grad(act, pre[i]) * inv_tau;
              detail::gemm(da.data(), kt.data(), dqt.data(), nr, nk, dh, true);
              dkt.assign(nk * dh, 0.0);
              detail::gemm_tn(da.data(), qt.data(), dkt.data(), nk, nr, dh);
              add_block(dK, k0, k1, c0, dkt.data(), dh);
            }
            add_block(dQ, r0, r1, c0, dqt.data(), dh);
          }
        }
        if (tp.requires_grad(iq)) tp.grad_buffer(iq) += dQ;
        if (tp.requires_grad(ik)) tp.grad_buffer(ik) += dK;
        if (tp.requires_grad(iv)) tp.grad_buffer(iv) += dV;
      });
}

Var gdpa_heads_naive(Var q, const GeneratedKv& kv, const GdpaConfig& cfg) {
  const std::size_t dh = q.cols() / cfg.heads;
  const double inv_tau = 1.0 / cfg.tau;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(kv.keys, h * dh, (h + 1) * dh);
    Var vh = slice_cols(kv.values, h * dh, (h + 1) * dh);
    Var scores = activate(scale(matmul_nt(qh, kh), inv_tau), cfg.activation(h));
    heads.push_back(matmul(scores, vh));
  }
  return heads.size() == 1 ? heads.front() : concat_cols(heads);
}

}  // namespace

Var gdpa_apply(Tape& tape, const std::string& prefix, Var s, const GeneratedKv& kv, const GdpaConfig& cfg,
               std::size_t valid) {
  check_kv(s, kv, cfg);
  Var wq = tape.param(prefix + ".wq"), wo = tape.param(prefix + ".wo");
  return on_valid_rows(s, valid, [&](Var x) {
    Var o = gdpa_heads_naive(matmul_nt(x, wq), kv, cfg);
    return add(matmul_nt(o, wo), x);
  });
}

Var gdpa_apply_blockwise(Tape& tape, const std::string& prefix, Var s, const GeneratedKv& kv, const GdpaConfig& cfg,
                         TileSize tile, std::size_t valid) {
  check_kv(s, kv, cfg);
  if (tile.rows < 1 || tile.kv < 1) throw ValidationError("GDPA tile sizes must be >= 1");
  Var wq = tape.param(prefix + ".wq"), wo = tape.param(prefix + ".wo");
  return on_valid_rows(s, valid, [&](Var x) {
    Var o = gdpa_tiles(matmul_nt(x, wq), kv.keys, kv.values, cfg, tile);
    return add(matmul_nt(o, wo), x);
  });
}

Var gdpa_forward(Tape& tape, const std::string& prefix, Var s, Var x_sum, const GdpaConfig& cfg) {
  GeneratedKv kv = generate_kv(tape, prefix + ".wg", x_sum, cfg.n_kv, s.cols());
  return gdpa_apply(tape, prefix, s, kv, cfg, s.rows());
}

Var gdpa_forward_blockwise(Tape& tape, const std::string& prefix, Var s, Var x_sum, const GdpaConfig& cfg,
                           TileSize tile) {
  GeneratedKv kv = generate_kv(tape, prefix + ".wg", x_sum, cfg.n_kv, s.cols());
  return gdpa_apply_blockwise(tape, prefix, s, kv, cfg, tile, s.rows());
}

Var gdpa_forward_jagged(Tape& tape, const std::string& prefix, Var values, const std::vector<std::size_t>& offsets,
                        const std::vector<Var>& x_sums, const GdpaConfig& cfg, const TileSize* tile) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != values.rows() ||
      x_sums.size() + 1 != offsets.size())
    throw ShapeError("GDPA jagged: offsets must span all rows with one summary per sample");
  std::vector<Var> parts;
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    if (offsets[b + 1] < offsets[b]) throw ShapeError("GDPA jagged: offsets must be non-decreasing");
    if (offsets[b + 1] == offsets[b]) continue;
    Var s = slice_rows(values, offsets[b], offsets[b + 1]);
    parts.push_back(tile ? gdpa_forward_blockwise(tape, prefix, s, x_sums[b], cfg, *tile)
                         : gdpa_forward(tape, prefix, s, x_sums[b], cfg));
  }
  if (parts.empty()) return values;
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

void init_pffn(ParamStore& params, const std::string& prefix, std::size_t n_sum, std::size_t d_in, std::size_t d,
               std::size_t hidden, Rng& rng) {
  init_linear(params, prefix + ".l0", n_sum * d_in, hidden, rng);
  init_linear(params, prefix + ".l1", hidden, d * d, rng);
  // Start near the identity transform.
  Tensor& b = params[prefix + ".l1.b"];
  for (std::size_t i = 0; i < d; ++i) b(0, i * d + i) = 1.0;
}

Var pffn_transform(Tape& tape, const std::string& prefix, Var x_sum, std::size_t d) {
  Var flat = reshape(x_sum, 1, x_sum.rows() * x_sum.cols());
  Var h = activate(apply_linear(tape, prefix + ".l0", flat), Activation::kSilu);
  Var f = apply_linear(tape, prefix + ".l1", h);
  if (f.cols() != d * d) throw ShapeError("PFFN: generator emits " + std::to_string(f.cols()) + " values, need d*d");
  return reshape(f, d, d);
}

Var pffn_original(Tape& tape, const std::string& prefix, Var x_sum, Var s) {
  return matmul_nt(s, pffn_transform(tape, prefix, x_sum, s.cols()));
}

std::uint64_t weight_gen_macs(std::size_t n_sum, std::size_t d_in, std::size_t n_kv, std::size_t d) {
  return 2ull * n_sum * d_in * n_kv * d;
}

std::uint64_t gdpa_macs(std::size_t T, std::size_t n_kv, std::size_t d) {
  return 2ull * T * d * d + 2ull * T * n_kv * d;
}

std::uint64_t pffn_macs(std::size_t T, std::size_t n_sum, std::size_t d_in, std::size_t d, std::size_t hidden) {
  return static_cast<std::uint64_t>(n_sum) * d_in * hidden + static_cast<std::uint64_t>(hidden) * d * d +
         static_cast<std::uint64_t>(T) * d * d;
}

}  // namespace kunlun
