#pragma once

#include "kunlun/metrics.hpp"
#include "kunlun/model.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace kunlun {

struct RunRecord {
  std::size_t step = 0;
  std::size_t samples_seen = 0;
  double train_ne = 0;
  double eval_ne = 0;
  double gflops_per_sample = 0;
  double qps = 0;
  double wall_time_s = 0;

  /// Equality of everything except the timing columns (qps, wall time).
  bool same_metrics(const RunRecord& o) const;
};

class Adam {
 public:
  explicit Adam(const TrainSettings& s) : s_(s) {}
  void step(ParamStore& params, const GradStore& grads, double lr_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  TrainSettings s_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct TrainResult {
  ParamStore params;
  std::vector<RunRecord> records;
  double initial_eval_ne = 0;
  double final_eval_ne = 0;
};

using RecordCallback = std::function<void(const RunRecord&)>;

/// Single pass over `train` in batches with Adam; NE on `eval` at step 0,
/// every record_every steps and after the last step.
TrainResult train_model(const Model& model, std::span<const Sample> train, std::span<const Sample> eval,
                        ParamStore params, const RecordCallback& on_record = {});
/// Splits the stream by the configured eval stride and trains from a fresh init.
TrainResult train_model(const Model& model, const std::vector<Sample>& stream, const RecordCallback& on_record = {});

NeReport evaluate(const Model& model, const ParamStore& params, std::span<const Sample> samples);

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records);
std::string records_csv(const std::vector<RunRecord>& records);

}  // namespace kunlun
