#include "kunlun/attention.hpp"
#include "kunlun/checkpoint.hpp"
#include "kunlun/data.hpp"
#include "kunlun/experiments.hpp"
#include "kunlun/gdpa.hpp"
#include "kunlun/gradcheck.hpp"
#include "kunlun/metrics.hpp"
#include "kunlun/model.hpp"
#include "kunlun/seqsum.hpp"
#include "kunlun/train.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

using namespace kunlun;
using testing::naive_matmul;
using testing::randn;

namespace {

const std::string kConfigs = KUNLUN_CONFIG_DIR;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void gradients(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t checks = 0;
  for (const std::string& m : gradcheck_modules())
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const double e = gradcheck_module(m, seed).max_rel_err();
      o.require(e < 1e-4, m + " seed " + std::to_string(seed));
      worst = std::max(worst, e);
      ++checks;
    }
  const double t = seconds_since(t0);
  o.require(t < 120, "runtime");
  o.detail << checks << " module/seed checks, worst rel-err " << worst << ", " << t << " s";
}

void fused_equivalence(Outcome& o) {
  const std::size_t d = 8, n_sum = 3, T = 13;
  GdpaConfig cfg;
  cfg.heads = 4;
  cfg.n_kv = 6;
  cfg.tau = 2.0;
  ParamStore params;
  Rng rng(101);
  init_gdpa(params, "g", d, rng, 0.5);
  init_weight_gen(params, "g.wg", n_sum, d, d, cfg.n_kv, rng);

  const std::vector<std::size_t> lengths{0, 1, T, 0, T, 1};
  std::vector<std::size_t> offsets{0};
  for (std::size_t len : lengths) offsets.push_back(offsets.back() + len);
  Tape tape(&params, false);
  const Var values = tape.constant(randn(rng, offsets.back(), d));
  std::vector<Var> sums;
  for (std::size_t b = 0; b < lengths.size(); ++b) sums.push_back(tape.constant(randn(rng, n_sum, d)));
  const Tensor naive = gdpa_forward_jagged(tape, "g", values, offsets, sums, cfg).value();

  double worst = 0;
  std::size_t tiles = 0;
  for (std::size_t rows : {std::size_t{1}, std::size_t{2}, std::size_t{4}, T, offsets.back()})
    for (std::size_t kv : {std::size_t{1}, std::size_t{4}, cfg.n_kv}) {
      const TileSize tile{rows, kv};
      worst = std::max(worst, max_abs_diff(gdpa_forward_jagged(tape, "g", values, offsets, sums, cfg, &tile).value(),
                                           naive));
      ++tiles;
    }
  o.require(worst <= 1e-10, "max abs diff");
  o.detail << tiles << " tile shapes on lengths {0,1," << T << "}, max abs diff " << worst;
}

void attention_reductions(Outcome& o) {
  Rng rng(202);
  ParamStore params;
  const std::size_t d = 8;
  init_mha(params, "a", d, rng);
  Tape tape(&params, false);
  const MhaParams attn = bind_mha(tape, "a", 2);
  double worst = 0;
  for (std::size_t T = 1; T <= 24; ++T) {
    const Var s = tape.constant(randn(rng, T, d));
    const Tensor full = mha_full(s, attn).value();
    for (std::size_t w : {T - 1, T, T + 7}) worst = std::max(worst, max_abs_diff(mha_window(s, attn, {w}).value(), full));
  }
  o.require(worst <= 1e-12, "window vs full");

  // Brute-force band sizes against the ledger for the reference config.
  const ModelConfig ref = load_config(kConfigs + "/reference.json");
  ModelConfig full_cfg = ref;
  full_cfg.variant.full_attention = true;
  const std::uint64_t windowed = flops_estimate(ref).flops("attention");
  const std::uint64_t dense = flops_estimate(full_cfg).flops("attention");
  std::uint64_t proj = 0, expect_windowed = 0, expect_dense = 0, band_total = 0, square_total = 0;
  const std::size_t layers = flops_estimate(ref).evaluations("attention");
  for (std::size_t e = 0; e < ref.events.size(); ++e) {
    const std::size_t T = ref.event_max_len(e), de = ref.events[e].d, w = ref.events[e].window;
    std::uint64_t band = 0;
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j) band += (i > j ? i - j : j - i) <= w && !(ref.events[e].causal && j > i);
    o.require(band == band_pairs(T, {w, ref.events[e].causal}), "band count for " + ref.events[e].name);
    const std::uint64_t p = self_attention_macs(T, de, 0);
    proj += 2 * p * layers;
    // Scores and weighted values: one multiply-accumulate per visible pair per channel, each.
    expect_windowed += 2 * (p + 2 * band * de) * layers;
    expect_dense += 2 * (p + 2 * std::uint64_t(T) * T * de) * layers;
    band_total += 2 * 2 * band * de * layers;
    square_total += 2 * 2 * std::uint64_t(T) * T * de * layers;
  }
  o.require(windowed == expect_windowed && dense == expect_dense, "ledger attention entries");
  o.require((windowed - proj) * square_total == (dense - proj) * band_total, "banded ratio");
  o.detail << "window>=T-1 max diff " << worst << ", attention term ratio " << (windowed - proj) << "/"
           << (dense - proj) << " = " << double(windowed - proj) / double(dense - proj);
}

Tensor kron(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q) out(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return out;
}

void sumkron_oracle(Outcome& o) {
  Rng rng(303);
  double worst = 0;
  std::size_t shapes = 0;
  for (std::size_t S = 1; S <= 4; ++S)
    for (std::size_t T = 1; T <= 4; ++T)
      for (std::size_t D = 1; D <= 4; ++D)
        for (std::size_t k = 1; k <= 3; ++k) {
          const Tensor x = randn(rng, S, D);
          Tensor dense = Tensor::matrix(T * D, S * D);
          Tape tape;
          std::vector<Var> z, w;
          for (std::size_t i = 0; i < k; ++i) {
            const Tensor zi = randn(rng, S, T), wi = randn(rng, D, D);
            dense += kron(zi.transposed(), wi.transposed());
            z.push_back(tape.constant(zi));
            w.push_back(tape.constant(wi));
          }
          const Tensor expect = naive_matmul(dense, x.reshaped({S * D, 1})).reshaped({T, D});
          worst = std::max(worst, max_abs_diff(sumkronlinear(tape.constant(x), z, w).value(), expect));
          o.require(sumkron_param_count(S, T, D, k) == k * (S * T + D * D), "param count");
          ++shapes;
        }
  o.require(worst <= 1e-12, "oracle diff");
  const std::uint64_t big = sumkron_param_count(256, 32, 384, 8);
  o.require(big == 1245184, "(256, 32, 384, 8) count");
  o.detail << shapes << " shapes, max diff " << worst << ", count(256,32,384,8) = " << big;
}

void compskip(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg = load_config(kConfigs + "/reference.json");
  for (std::size_t L = 1; L <= 8; ++L) {
    const auto flags = compskip_config(L);
    for (std::size_t l = 0; l < L; ++l) {
      const bool even = l % 2 == 0;
      o.require(flags[l].skip_attention == even && flags[l].skip_hsp == !even && flags[l].skip_pffn == !even,
                "flags L=" + std::to_string(L));
    }
    ModelConfig c = cfg;
    c.layers = L;
    for (auto& ev : c.events) ev.layers.reset();
    const FlopsLedger led = flops_estimate(c);
    o.require(led.evaluations("cls_pooling") == (L + 1) / 2, "summary evaluations L=" + std::to_string(L));
    o.require(led.evaluations("attention") == L / 2, "attention evaluations L=" + std::to_string(L));
  }
  const double r = compskip_reduction(cfg);
  const double t = seconds_since(t0);
  o.require(r >= 0.35 && r <= 0.50, "reduction band");
  o.require(t < 1.0, "runtime");
  o.detail << "reduction " << r << " on the reference config, " << t << " s";
}

void ne_metric(Outcome& o) {
  Rng rng(404);
  std::vector<double> y;
  for (int i = 0; i < 1000; ++i) y.push_back(rng.bernoulli(0.17) ? 1.0 : 0.0);
  double ctr = 0;
  for (double v : y) ctr += v / double(y.size());
  const double constant = normalized_entropy(y, std::vector<double>(y.size(), ctr)).ne;
  o.require(std::abs(constant - 1.0) <= 1e-9, "constant predictor");

  const std::vector<double> hy{1, 0, 0, 0}, hp{0.7, 0.1, 0.1, 0.1};
  const double ce = -(std::log(0.7) + 3 * std::log(0.9)) / 4;
  const double h = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
  const double got = normalized_entropy(hy, hp).ne;
  o.require(std::abs(got - ce / h) <= 1e-6, "hand case");
  o.detail << "constant NE " << constant << ", hand case " << got << " vs " << ce / h;
}

void scaling_fit(Outcome& o) {
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i <= 8; ++i) {
    const double c = 5.0 * std::pow(10.0, i / 4.0);
    pts.emplace_back(c, 0.8 - 0.01 * std::log(c / 5.0));
  }
  const ScalingFit exact = fit_scaling(pts);
  o.require(std::abs(exact.eta - 0.01) <= 1e-10, "noiseless");

  Rng rng(505);
  std::size_t within = 0;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto noisy = pts;
    for (auto& p : noisy) p.second += 1e-4 * rng.normal();
    const double rel = std::abs(fit_scaling(noisy).eta - 0.01) / 0.01;
    worst = std::max(worst, rel);
    within += rel <= 0.05;
  }
  o.require(within == 100, "noisy trials");

  ScalingFit twice = exact;
  twice.eta = 0.02;
  const double eff = scaling_efficiency(twice, 0.01);
  o.require(eff == 2.0, "efficiency");
  o.detail << "noiseless |eta err| " << std::abs(exact.eta - 0.01) << ", noisy " << within
           << "/100 within 5% (worst " << worst << "), efficiency " << eff;
}

void desk_training(Outcome& o) {
  const Dataset data = gen_data(load_spec(kConfigs + "/synthetic.json"));
  const ModelConfig ref = load_config(kConfigs + "/reference.json");
  std::ifstream grid_file(kConfigs + "/grid_layers.json");
  std::stringstream grid_text;
  grid_text << grid_file.rdbuf();
  const auto grid = expand_grid(ref, grid_text.str());
  const SweepResult sweep = sweep_scaling(grid, data.samples);

  // The L = 4 grid point is the reference config itself.
  const SweepPoint* reference = nullptr;
  for (const SweepPoint& p : sweep.points)
    if (config_to_json(p.config) == config_to_json(ref)) reference = &p;
  o.require(reference != nullptr, "reference config in grid");
  if (reference) {
    const RunRecord& first = reference->records.front();
    const RunRecord& last = reference->records.back();
    o.require(last.eval_ne < 0.995 * first.eval_ne, "reference NE drop");
    o.require(last.wall_time_s < 900, "reference runtime");
    o.detail << "reference eval NE " << first.eval_ne << " -> " << last.eval_ne << " in " << last.wall_time_s
             << " s; ";
  }
  o.detail << "sweep NE";
  for (std::size_t i = 0; i < sweep.points.size(); ++i) {
    o.detail << ' ' << sweep.points[i].final_ne;
    if (i > 0) o.require(sweep.points[i].final_ne <= sweep.points[i - 1].final_ne + 1e-4, "non-increasing NE");
    if (i > 1) {
      const double prev = sweep.points[i - 2].final_ne - sweep.points[i - 1].final_ne;
      const double gain = sweep.points[i - 1].final_ne - sweep.points[i].final_ne;
      o.require(gain <= prev + 1e-4, "diminishing gains");
    }
  }
  o.require(sweep.fit.eta > 0, "eta > 0");
  o.detail << ", eta " << sweep.fit.eta;
}

void determinism(Outcome& o) {
  SyntheticSpec spec = load_spec(kConfigs + "/synthetic.json");
  spec.samples = 2000;
  const Dataset data = gen_data(spec);
  ModelConfig cfg = load_config(kConfigs + "/reference.json");
  cfg.train.record_every = 5;
  const Model model(cfg);
  const TrainResult a = train_model(model, data.samples), b = train_model(model, data.samples);
  bool same = a.records.size() == b.records.size();
  for (std::size_t i = 0; same && i < a.records.size(); ++i) same = a.records[i].same_metrics(b.records[i]);
  o.require(same, "records");

  std::vector<Sample> train, eval;
  split_stream(data.samples, cfg.train.eval_stride, train, eval);
  const auto path = std::filesystem::temp_directory_path() / "kunlun_acceptance_ckpt.bin";
  save_checkpoint(path.string(), cfg, a.params);
  const Checkpoint ck = load_checkpoint(path.string());
  std::filesystem::remove(path);
  const double before = evaluate(model, a.params, eval).ne;
  const double after = evaluate(Model(ck.config), ck.params, eval).ne;
  o.require(before == after && before == a.final_eval_ne, "checkpoint eval NE");
  o.detail << a.records.size() << " identical records, eval NE " << before << " before and after reload";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"gradient suite", gradients},
      {"fused equivalence", fused_equivalence},
      {"attention reductions", attention_reductions},
      {"SumKronLinear oracle", sumkron_oracle},
      {"CompSkip", compskip},
      {"NE metric", ne_metric},
      {"scaling fit", scaling_fit},
      {"desk training", desk_training},
      {"determinism and persistence", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
