#include "kunlun/train.hpp"

#include "kunlun/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace kunlun {

bool RunRecord::same_metrics(const RunRecord& o) const {
  return step == o.step && samples_seen == o.samples_seen && train_ne == o.train_ne && eval_ne == o.eval_ne &&
         gflops_per_sample == o.gflops_per_sample;
}

void Adam::step(ParamStore& params, const GradStore& grads, double lr_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  const double lr = s_.lr * lr_scale;
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Tensor& m = m_.try_emplace(name, p.shape()).first->second;
    Tensor& v = v_.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->second[i];
      m[i] = s_.beta1 * m[i] + (1 - s_.beta1) * gi;
      v[i] = s_.beta2 * v[i] + (1 - s_.beta2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s_.eps);
    }
  }
}

NeReport evaluate(const Model& model, const ParamStore& params, std::span<const Sample> samples) {
  std::vector<double> y, p = model.predict(params, samples);
  for (const auto& s : samples) y.push_back(s.label);
  return normalized_entropy(y, p);
}

namespace {

double checked_ne(const NeReport& r, const char* what) {
  if (!std::isfinite(r.ne) || r.ne > 10.0)
    throw NumericalError(std::string("training diverged: ") + what + " NE = " + std::to_string(r.ne));
  return r.ne;
}

}  // namespace

TrainResult train_model(const Model& model, std::span<const Sample> train, std::span<const Sample> eval,
                        ParamStore params, const RecordCallback& on_record) {
  const TrainSettings& ts = model.config().train;
  if (eval.empty()) throw ValidationError("evaluation slice is empty");
  if (ts.max_samples > 0 && train.size() > ts.max_samples) train = train.first(ts.max_samples);
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const double gflops = static_cast<double>(flops_estimate(model.config()).total()) * 1e-9;

  TrainResult res;
  Adam opt(ts);
  double train_seconds = 0;
  std::size_t seen = 0, step = 0;
  std::vector<double> window_y, window_p;
  auto record = [&](double train_ne) {
    RunRecord r;
    r.step = step;
    r.samples_seen = seen;
    r.train_ne = train_ne;
    r.eval_ne = checked_ne(evaluate(model, params, eval), "eval");
    r.gflops_per_sample = gflops;
    r.qps = train_seconds > 0 ? static_cast<double>(seen) / train_seconds : 0.0;
    r.wall_time_s = std::chrono::duration<double>(clock::now() - start).count();
    res.records.push_back(r);
    if (on_record) on_record(r);
  };

  const std::span<const Sample> probe = train.first(std::min<std::size_t>(train.size(), 1024));
  record(probe.empty() ? 0.0 : checked_ne(evaluate(model, params, probe), "train"));
  res.initial_eval_ne = res.records.back().eval_ne;

  const std::size_t total_steps = (train.size() + ts.batch - 1) / ts.batch;
  for (std::size_t at = 0; at < train.size(); at += ts.batch) {
    const std::span<const Sample> batch = train.subspan(at, std::min(ts.batch, train.size() - at));
    const auto t0 = clock::now();
    GradStore grads;
    {
      Tape tape(&params);
      std::vector<Var> losses;
      for (const Sample& s : batch) {
        Var logit = model.forward_logit(tape, s);
        const double z = logit.value().item();
        window_y.push_back(s.label);
        window_p.push_back(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
        losses.push_back(bce_with_logits(logit, s.label));
      }
      Var loss = scale(losses.size() == 1 ? losses.front() : sum(concat_rows(losses)),
                       1.0 / static_cast<double>(batch.size()));
      if (!std::isfinite(loss.value().item())) throw NumericalError("training diverged: non-finite loss");
      grads = tape.backward(loss);
    }
    opt.step(params, grads, ts.linear_decay ? 1.0 - static_cast<double>(step) / static_cast<double>(total_steps) : 1.0);
    train_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    seen += batch.size();
    ++step;
    const bool last = at + ts.batch >= train.size();
    if (step % ts.record_every == 0 || last) {
      // A window with a single label class has no background entropy; it is
      // carried into the next window and the previous value is repeated.
      const bool mixed = std::count(window_y.begin(), window_y.end(), 1.0) % window_y.size() != 0;
      if (mixed) {
        record(checked_ne(normalized_entropy(window_y, window_p), "train"));
        window_y.clear();
        window_p.clear();
      } else {
        record(res.records.back().train_ne);
      }
    }
  }
  res.final_eval_ne = res.records.back().eval_ne;
  res.params = std::move(params);
  return res;
}

TrainResult train_model(const Model& model, const std::vector<Sample>& stream, const RecordCallback& on_record) {
  std::vector<Sample> train, eval;
  split_stream(stream, model.config().train.eval_stride, train, eval);
  return train_model(model, train, eval, model.init_params(), on_record);
}

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << "step,samples_seen,train_ne,eval_ne,gflops_per_sample,qps,wall_time_s\n";
  out << std::setprecision(17);
  for (const auto& r : records)
    out << r.step << ',' << r.samples_seen << ',' << r.train_ne << ',' << r.eval_ne << ',' << r.gflops_per_sample
        << ',' << r.qps << ',' << r.wall_time_s << '\n';
}

std::string records_csv(const std::vector<RunRecord>& records) {
  std::ostringstream ss;
  write_records_csv(ss, records);
  return ss.str();
}

}  // namespace kunlun
