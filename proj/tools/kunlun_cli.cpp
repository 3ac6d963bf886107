#include "kunlun/checkpoint.hpp"
#include "kunlun/data.hpp"
#include "kunlun/experiments.hpp"
#include "kunlun/gradcheck.hpp"
#include "kunlun/metrics.hpp"
#include "kunlun/model.hpp"
#include "kunlun/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace kunlun;
namespace fs = std::filesystem;

namespace {

void print_record(const RunRecord& r) {
  std::ostringstream line;
  line << "step " << std::setw(5) << r.step << "  samples " << std::setw(7) << r.samples_seen << "  train_ne "
       << std::fixed << std::setprecision(4) << r.train_ne << "  eval_ne " << r.eval_ne << "  qps "
       << std::setprecision(1) << r.qps << "  t " << r.wall_time_s << "s";
  std::cout << line.str() << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<std::pair<double, double>> read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("points file is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) header.push_back(col);
  }
  const auto find = [&](std::initializer_list<const char*> names) {
    for (const char* name : names)
      for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw ValidationError(std::string("points file needs a '") + *names.begin() + "' column");
  };
  const std::size_t ci = find({"compute"}), ni = find({"ne", "final_ne"});
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
    if (cols.size() != header.size()) throw ValidationError("points file: ragged row '" + line + "'");
    try {
      pts.emplace_back(std::stod(cols[ci]), std::stod(cols[ni]));
    } catch (const std::logic_error&) {
      throw ValidationError("points file: not a number in '" + line + "'");
    }
  }
  return pts;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');)
    if (!t.empty()) out.push_back(t);
  return out;
}

void print_ledger(const FlopsLedger& led) {
  std::cout << std::left << std::setw(16) << "module" << std::right << std::setw(16) << "flops" << std::setw(8)
            << "evals" << '\n';
  for (const auto& e : led.entries)
    std::cout << std::left << std::setw(16) << e.module << std::right << std::setw(16) << e.flops << std::setw(8)
              << e.evaluations << '\n';
  std::cout << std::left << std::setw(16) << "total" << std::right << std::setw(16) << led.total() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kunlun CTR model: synthetic data, training, FLOPs ledger and scaling analysis"};
  app.require_subcommand(1);

  std::string spec_path, out_path, config_path, data_path, out_dir, ckpt_path, module, points_path, grid_path,
      toggles, axis = "flops";
  std::size_t seeds = 5;
  double threshold = 1e-4, baseline_eta = 0, peak_gflops = 50;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Generator spec (JSON)")->required();
  gen->add_option("--out", out_path, "Output data file")->required();

  auto* train = app.add_subcommand("train", "Train a model in a single pass");
  train->add_option("--config", config_path, "Model config (JSON)")->required();
  train->add_option("--data", data_path, "Data file")->required();
  train->add_option("--out-dir", out_dir, "Directory for records.csv and checkpoint.bin")->required();
  train->add_option("--peak-gflops", peak_gflops, "Peak FLOP rate used for MFU, in GFLOP/s");

  auto* eval = app.add_subcommand("eval", "Normalized entropy of a checkpoint on a data file");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--data", data_path, "Data file")->required();

  auto* flops = app.add_subcommand("flops", "Per-sample FLOPs ledger of a config");
  flops->add_option("--config", config_path, "Model config (JSON)")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--module", module, "Single module to check");
  grad->add_option("--seeds", seeds, "Random instances per module");
  grad->add_option("--threshold", threshold, "Maximum relative error");

  auto* fit = app.add_subcommand("fit-scaling", "Fit NE against log compute");
  fit->add_option("--points", points_path, "CSV with compute and ne columns")->required();
  fit->add_option("--baseline-eta", baseline_eta, "Report scaling efficiency against this coefficient");

  auto* sweep = app.add_subcommand("sweep", "Train a grid of configs and fit a scaling curve");
  sweep->add_option("--config", config_path, "Base model config (JSON)")->required();
  sweep->add_option("--grid", grid_path, "Grid of overrides (JSON)")->required();
  sweep->add_option("--data", data_path, "Data file")->required();
  sweep->add_option("--out-dir", out_dir, "Directory for sweep.csv");
  sweep->add_option("--compute-axis", axis, "flops or flops-samples");

  auto* abl = app.add_subcommand("ablate", "Compare component toggles against the base config");
  abl->add_option("--config", config_path, "Base model config (JSON)")->required();
  abl->add_option("--toggles", toggles, "Comma-separated toggles")->required();
  abl->add_option("--data", data_path, "Data file; without it only FLOPs are compared");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const SyntheticSpec spec = load_spec(spec_path);
      const Dataset data = gen_data(spec);
      write_dataset(out_path, data);
      double clicks = 0;
      for (const auto& s : data.samples) clicks += s.label;
      std::cout << "samples " << data.samples.size() << "  ctr " << clicks / double(data.samples.size())
                << "  ne_floor " << ne_floor(data) << '\n';
    } else if (*train) {
      const Model model(load_config(config_path));
      const Dataset data = read_dataset(data_path);
      if (!(data.schema == model.config().schema)) throw ValidationError("data schema does not match the config");
      fs::create_directories(out_dir);
      const TrainResult res = train_model(model, data.samples, print_record);
      write_text(fs::path(out_dir) / "records.csv", records_csv(res.records));
      save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), model.config(), res.params);
      std::cout << "initial eval NE " << res.initial_eval_ne << "  final eval NE " << res.final_eval_ne << "  mfu "
                << mfu(flops_estimate(model.config()), res.records.back().qps, peak_gflops * 1e9) << '\n';
    } else if (*eval) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      const Model model(ck.config);
      const Dataset data = read_dataset(data_path);
      if (!(data.schema == ck.config.schema)) throw ValidationError("data schema does not match the checkpoint");
      const NeReport r = evaluate(model, ck.params, data.samples);
      std::cout << std::setprecision(17) << "samples " << r.n << "  ctr " << r.ctr << "  cross_entropy "
                << r.cross_entropy << "  ne " << r.ne << '\n';
    } else if (*flops) {
      const ModelConfig cfg = load_config(config_path);
      print_ledger(flops_estimate(cfg));
      if (cfg.layers > 0) std::cout << "compskip reduction " << compskip_reduction(cfg) << '\n';
    } else if (*grad) {
      std::vector<std::string> mods = module.empty() ? gradcheck_modules() : std::vector<std::string>{module};
      bool ok = true;
      for (const auto& m : mods) {
        double worst = 0;
        for (std::uint64_t s = 1; s <= seeds; ++s) worst = std::max(worst, gradcheck_module(m, s).max_rel_err());
        ok = ok && worst < threshold;
        std::ostringstream line;
        line << std::left << std::setw(16) << m << " max rel err " << std::scientific << std::setprecision(2)
             << worst << (worst < threshold ? "  ok" : "  FAIL");
        std::cout << line.str() << '\n';
      }
      if (!ok) return 2;
    } else if (*fit) {
      const ScalingFit f = fit_scaling(read_points(points_path));
      std::cout << std::setprecision(10) << "ne0 " << f.ne0 << "  eta " << f.eta << "  c0 " << f.c0
                << "  residual_rms " << f.residual_rms << '\n';
      if (baseline_eta != 0) std::cout << "scaling efficiency " << scaling_efficiency(f, baseline_eta) << '\n';
    } else if (*sweep) {
      const ComputeAxis ax = parse_compute_axis(axis);
      const ModelConfig base = load_config(config_path);
      std::ifstream gin(grid_path);
      if (!gin) throw ValidationError("cannot open grid '" + grid_path + "'");
      std::stringstream gs;
      gs << gin.rdbuf();
      const auto grid = expand_grid(base, gs.str());
      const Dataset data = read_dataset(data_path);
      if (!(data.schema == base.schema)) throw ValidationError("data schema does not match the config");
      const SweepResult res = sweep_scaling(grid, data.samples, ax);
      std::cout << sweep_csv(res);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "sweep.csv", sweep_csv(res));
      }
    } else if (*abl) {
      const ModelConfig base = load_config(config_path);
      if (data_path.empty()) {
        std::cout << ablation_csv(ablate(base, split_list(toggles)));
      } else {
        const Dataset data = read_dataset(data_path);
        if (!(data.schema == base.schema)) throw ValidationError("data schema does not match the config");
        std::cout << ablation_csv(ablate(base, split_list(toggles), &data.samples));
      }
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
