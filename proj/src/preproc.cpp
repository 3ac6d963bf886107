#include "kunlun/preproc.hpp"

#include <algorithm>
#include <cmath>

namespace kunlun {

void FeatureSchema::validate() const {
  for (std::size_t i = 0; i < sparse_vocab.size(); ++i)
    if (sparse_vocab[i] < 1) throw ValidationError("sparse feature " + std::to_string(i) + " has an empty vocabulary");
  for (const auto& e : events) {
    if (e.item_vocab < 1) throw ValidationError("event stream '" + e.name + "' has an empty item vocabulary");
    if (e.max_len < 1) throw ValidationError("event stream '" + e.name + "' needs max_len >= 1");
  }
}

bool FeatureSchema::operator==(const FeatureSchema& o) const {
  if (dense != o.dense || sparse_vocab != o.sparse_vocab || events.size() != o.events.size()) return false;
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i].name != o.events[i].name || events[i].item_vocab != o.events[i].item_vocab ||
        events[i].max_len != o.events[i].max_len)
      return false;
  return true;
}

void validate_sample(const FeatureSchema& schema, const Sample& s) {
  if (s.label > 1) throw ValidationError("label must be 0 or 1");
  if (s.dense.size() != schema.dense)
    throw ValidationError("expected " + std::to_string(schema.dense) + " dense features, got " +
                          std::to_string(s.dense.size()));
  for (double v : s.dense)
    if (!std::isfinite(v)) throw ValidationError("dense feature is not finite");
  if (s.sparse.size() != schema.sparse_count())
    throw ValidationError("expected " + std::to_string(schema.sparse_count()) + " sparse features, got " +
                          std::to_string(s.sparse.size()));
  for (std::size_t i = 0; i < s.sparse.size(); ++i)
    if (s.sparse[i] >= schema.sparse_vocab[i])
      throw ValidationError("sparse feature " + std::to_string(i) + " id " + std::to_string(s.sparse[i]) +
                            " out of vocabulary");
  if (s.events.size() != schema.events.size())
    throw ValidationError("expected " + std::to_string(schema.events.size()) + " event streams, got " +
                          std::to_string(s.events.size()));
  for (std::size_t k = 0; k < s.events.size(); ++k) {
    const auto& e = s.events[k];
    const auto& es = schema.events[k];
    if (e.items.size() != e.timestamps.size())
      throw ValidationError("event stream '" + es.name + "' has mismatched items and timestamps");
    if (e.items.size() > es.max_len)
      throw ValidationError("event stream '" + es.name + "' length " + std::to_string(e.items.size()) +
                            " exceeds max_len " + std::to_string(es.max_len));
    for (std::size_t i = 0; i < e.items.size(); ++i) {
      if (e.items[i] >= es.item_vocab)
        throw ValidationError("event stream '" + es.name + "' item id " + std::to_string(e.items[i]) +
                              " out of vocabulary");
      if (!std::isfinite(e.timestamps[i]) || (i > 0 && e.timestamps[i] < e.timestamps[i - 1]))
        throw ValidationError("event stream '" + es.name + "' timestamps must be finite and non-decreasing");
    }
  }
}

RoteConfig RoteConfig::geometric(std::size_t d, double base, double tau_scale) {
  RoteConfig cfg;
  cfg.tau_scale = tau_scale;
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double f = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    cfg.theta.push_back(f);
    cfg.phi.push_back(f);
  }
  return cfg;
}

void RoteConfig::validate(std::size_t d) const {
  if (d < 2 || d % 2 != 0) throw ValidationError("ROTE needs an even embedding dim >= 2, got " + std::to_string(d));
  if (!(tau_scale > 0)) throw ValidationError("ROTE tau_scale must be > 0");
  if (theta.size() != d / 2 || phi.size() != d / 2)
    throw ValidationError("ROTE frequency lists need exactly d/2 = " + std::to_string(d / 2) + " entries");
}

Var embed_dense(Var w_dense, std::span<const double> x_dense) {
  const Tensor& W = w_dense.value();
  if (W.cols() != x_dense.size())
    throw ValidationError("dense feature count " + std::to_string(x_dense.size()) + " does not match projection " +
                          W.shape_str());
  Var x = w_dense.tape()->constant(Tensor::row({x_dense.begin(), x_dense.end()}));
  return matmul_nt(x, w_dense);
}

Var embed_sparse(Var table, std::uint32_t id) {
  const std::uint32_t one[1] = {id};
  return gather_rows(table, one);
}

Var assemble_nonseq(Var dense, const std::vector<Var>& sparse) {
  if (dense.rows() != 1) throw ShapeError("assemble_nonseq: dense embedding must be 1 x d");
  std::vector<Var> rows{dense};
  for (const Var& s : sparse) {
    if (s.rows() != 1 || s.cols() != dense.cols())
      throw ShapeError("assemble_nonseq: sparse embedding " + s.value().shape_str() + " does not match dense 1 x " +
                       std::to_string(dense.cols()));
    rows.push_back(s);
  }
  return concat_rows(rows);
}

void init_fusion(ParamStore& params, const std::string& prefix, std::size_t streams, std::size_t d,
                 std::size_t mlp_layers, Rng& rng) {
  std::vector<std::size_t> widths{streams * d};
  for (std::size_t i = 0; i < mlp_layers; ++i) widths.push_back(d);
  init_mlp(params, prefix, widths, rng);
}

Var fuse_sequences(Tape& tape, const std::vector<Var>& seqs, const std::string& prefix, std::size_t mlp_layers,
                   Activation act) {
  if (seqs.empty()) throw ValidationError("fuse_sequences: at least one sequence is required");
  std::size_t T = 0;
  for (const Var& s : seqs) T = std::max(T, s.rows());
  const std::size_t d = seqs.front().cols();
  std::vector<Var> aligned;
  for (const Var& s : seqs) {
    if (s.cols() != d) throw ShapeError("fuse_sequences: all sequences must share the embedding dim");
    if (s.rows() == T)
      aligned.push_back(s);
    else if (s.rows() == 0)
      aligned.push_back(zeros(tape, T, d));
    else
      aligned.push_back(concat_rows({zeros(tape, T - s.rows(), d), s}));
  }
  if (T == 0) return zeros(tape, 0, d);
  Var joined = aligned.size() == 1 ? aligned.front() : concat_cols(aligned);
  Var out = joined;
  for (std::size_t i = 0; i < mlp_layers; ++i)
    out = activate(apply_linear(tape, prefix + ".l" + std::to_string(i), out), act);
  if (out.cols() != d) throw ShapeError("fuse_sequences: MLP output width must equal the sequence dim");
  return out;
}

double rote_log_gap(double delta_t, double tau_scale) {
  if (delta_t < 0) throw ValidationError("ROTE time gap must be >= 0");
  return std::log1p(delta_t / tau_scale);
}

namespace {

void rotate_row(const double* in, double* out, std::size_t d, double position, double tau, const RoteConfig& cfg,
                double sign) {
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double a = sign * (position * cfg.theta[i] + tau * cfg.phi[i]);
    const double c = std::cos(a), s = std::sin(a);
    const double x0 = in[2 * i], x1 = in[2 * i + 1];
    out[2 * i] = c * x0 - s * x1;
    out[2 * i + 1] = s * x0 + c * x1;
  }
}

}  // namespace

Tensor rote_raw(const Tensor& x, double position, double tau, const RoteConfig& cfg) {
  cfg.validate(x.cols());
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    rotate_row(x.data() + r * x.cols(), out.data() + r * x.cols(), x.cols(), position, tau, cfg, 1.0);
  return out;
}

Tensor rote(const Tensor& x, double position, double delta_t, const RoteConfig& cfg) {
  return rote_raw(x, position, rote_log_gap(delta_t, cfg.tau_scale), cfg);
}

Var rote_rows(Var x, std::span<const double> positions, std::span<const double> delta_t, const RoteConfig& cfg) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), d = X.cols();
  cfg.validate(d);
  if (positions.size() != rows || delta_t.size() != rows)
    throw ShapeError("rote_rows: one position and one gap per row required");
  std::vector<double> pos(positions.begin(), positions.end()), tau(rows);
  for (std::size_t r = 0; r < rows; ++r) tau[r] = rote_log_gap(delta_t[r], cfg.tau_scale);
  Tensor out = Tensor::matrix(rows, d);
  for (std::size_t r = 0; r < rows; ++r) rotate_row(X.data() + r * d, out.data() + r * d, d, pos[r], tau[r], cfg, 1.0);
  const std::size_t ix = x.id();
  return x.tape()->push("rote", std::move(out), {x}, [ix, pos, tau, cfg, d](Tape& t, std::size_t self) {
    // R is orthogonal, so the adjoint is the rotation by the negated angle.
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    std::vector<double> back(d);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      rotate_row(g.data() + r * d, back.data(), d, pos[r], tau[r], cfg, -1.0);
      for (std::size_t j = 0; j < d; ++j) gx(r, j) += back[j];
    }
  });
}

std::vector<double> rote_gaps(std::span<const double> timestamps, double request_time, GapConvention convention) {
  std::vector<double> gaps(timestamps.size());
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if (convention == GapConvention::kGapToPrevious)
      gaps[i] = i == 0 ? 0.0 : timestamps[i] - timestamps[i - 1];
    else
      gaps[i] = request_time - timestamps[i];
    gaps[i] = std::max(gaps[i], 0.0);
  }
  return gaps;
}

}  // namespace kunlun
