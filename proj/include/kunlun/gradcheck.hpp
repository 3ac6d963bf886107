#pragma once

#include "kunlun/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace kunlun {

/// Per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
/// between reverse-mode gradients of `loss` and central differences over every
/// entry of `inputs`.
std::map<std::string, double> compare_gradients(ParamStore& inputs, const std::function<Var(Tape&)>& loss,
                                                double h = 1e-5, double floor = 1e-12);

struct GradcheckReport {
  std::string module;
  std::uint64_t seed = 0;
  std::map<std::string, double> rel_err;

  double max_rel_err() const;
};

std::vector<std::string> gradcheck_modules();
/// Random small instance of the named module, checked end to end.
GradcheckReport gradcheck_module(const std::string& module, std::uint64_t seed, double h = 1e-5);

}  // namespace kunlun
