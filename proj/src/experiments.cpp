#include "kunlun/experiments.hpp"

#include <json.hpp>

#include <iomanip>
#include <sstream>

namespace kunlun {

using nlohmann::json;

ComputeAxis parse_compute_axis(const std::string& name) {
  if (name == "flops") return ComputeAxis::kFlops;
  if (name == "flops-samples") return ComputeAxis::kFlopsSamples;
  throw ValidationError("unknown compute axis '" + name + "' (expected flops or flops-samples)");
}

std::vector<ModelConfig> expand_grid(const ModelConfig& base, const std::string& grid_json) {
  json grid;
  try {
    grid = json::parse(grid_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grid is not valid JSON: ") + e.what());
  }
  if (!grid.is_object() || grid.empty()) throw ValidationError("grid must be a non-empty object of value lists");
  std::vector<json> configs{json::parse(config_to_json(base))};
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty()) throw ValidationError("grid entry '" + key + "' must be a non-empty list");
    std::vector<json> next;
    for (const json& c : configs)
      for (const json& v : values) {
        json n = c;
        n[key] = v;
        if (key == "layers")
          for (auto& ev : n["events"]) ev.erase("layers");
        next.push_back(std::move(n));
      }
    configs = std::move(next);
  }
  std::vector<ModelConfig> out;
  for (const json& c : configs) out.push_back(config_from_json(c.dump()));
  return out;
}

SweepResult sweep_scaling(const std::vector<ModelConfig>& grid, const std::vector<Sample>& stream, ComputeAxis axis,
                          const RecordCallback& on_record) {
  if (grid.size() < 3) throw ValidationError("a scaling sweep needs at least 3 configurations");
  SweepResult res;
  std::vector<std::pair<double, double>> pts;
  for (const ModelConfig& cfg : grid) {
    Model model(cfg);
    TrainResult tr = train_model(model, stream, on_record);
    SweepPoint p;
    p.config = cfg;
    p.flops_per_sample = static_cast<double>(flops_estimate(cfg).total());
    p.compute = axis == ComputeAxis::kFlops ? p.flops_per_sample
                                            : p.flops_per_sample * static_cast<double>(tr.records.back().samples_seen);
    p.final_ne = tr.final_eval_ne;
    p.records = std::move(tr.records);
    pts.emplace_back(p.compute, p.final_ne);
    res.points.push_back(std::move(p));
  }
  res.fit = fit_scaling(pts);
  return res;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream ss;
  ss << std::setprecision(17) << "layers,flops_per_sample,compute,final_ne,fit_ne\n";
  for (const auto& p : r.points)
    ss << p.config.layers << ',' << p.flops_per_sample << ',' << p.compute << ',' << p.final_ne << ','
       << r.fit.predict(p.compute) << '\n';
  ss << "# ne0=" << r.fit.ne0 << " eta=" << r.fit.eta << " c0=" << r.fit.c0 << " residual_rms=" << r.fit.residual_rms
     << '\n';
  return ss.str();
}

ModelConfig apply_toggle(const ModelConfig& base, const std::string& t) {
  ModelConfig c = base;
  if (t == "pffn") {
    c.variant.pffn = true;
  } else if (t == "pma") {
    c.variant.pma = true;
  } else if (t == "full_attention") {
    c.variant.full_attention = true;
  } else if (t == "no_compskip") {
    c.compskip = false;
  } else if (t == "rank1_kron") {
    for (auto& ev : c.events) ev.rank = 1;
  } else if (t == "single_expert") {
    c.experts = 1;
    c.expert_ranges.clear();
  } else {
    throw ValidationError("unknown ablation toggle '" + t + "'");
  }
  c.validate();
  return c;
}

std::vector<AblationRow> ablate(const ModelConfig& base, const std::vector<std::string>& toggles,
                                const std::vector<Sample>* stream) {
  std::vector<std::pair<std::string, ModelConfig>> runs{{"baseline", base}};
  for (const auto& t : toggles) runs.emplace_back(t, apply_toggle(base, t));
  std::vector<AblationRow> rows;
  for (auto& [name, cfg] : runs) {
    AblationRow r;
    r.toggle = name;
    r.ledger = flops_estimate(cfg);
    r.gflops = static_cast<double>(r.ledger.total()) * 1e-9;
    if (stream) {
      Model model(cfg);
      TrainResult tr = train_model(model, *stream);
      r.trained = true;
      r.eval_ne = tr.final_eval_ne;
      r.qps = tr.records.back().qps;
    }
    rows.push_back(std::move(r));
  }
  for (auto& r : rows) {
    r.delta_gflops_pct = 100.0 * (r.gflops - rows.front().gflops) / rows.front().gflops;
    if (r.trained) r.delta_ne_pct = 100.0 * (r.eval_ne - rows.front().eval_ne) / rows.front().eval_ne;
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream ss;
  ss << std::setprecision(10) << "toggle,gflops_per_sample,delta_gflops_pct,eval_ne,delta_ne_pct,qps\n";
  for (const auto& r : rows) {
    ss << r.toggle << ',' << r.gflops << ',' << r.delta_gflops_pct << ',';
    if (r.trained)
      ss << r.eval_ne << ',' << r.delta_ne_pct << ',' << r.qps;
    else
      ss << ",,";
    ss << '\n';
  }
  return ss.str();
}

}  // namespace kunlun
