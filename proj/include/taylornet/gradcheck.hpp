// Central finite-difference verification of analytic gradients. Double
// precision, step 1e-4 scaled by element magnitude.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "taylornet/tensor.hpp"

namespace taylornet {

struct GroupError {
  std::string group;
  double max_rel_err = 0.0;
  int64_t elements = 0;
};

struct GradCheckReport {
  std::string component;
  std::vector<GroupError> groups;

  double worst() const {
    double w = 0;
    for (const auto& g : groups) w = std::max(w, g.max_rel_err);
    return w;
  }
};

// Perturbs every element of every named tensor in place, re-evaluates the
// scalar objective, and compares the central difference with the analytic
// gradient. `forward` must be a pure function of the referenced tensors.
inline GradCheckReport fd_check(
    std::string component,
    std::vector<std::pair<std::string, Tensor<double>*>> inputs,
    const std::vector<Tensor<double>>& analytic, const std::function<double()>& forward,
    double base_step = 1e-4) {
  if (inputs.size() != analytic.size())
    throw std::invalid_argument("fd_check: analytic gradient count mismatch");
  GradCheckReport report{std::move(component), {}};
  for (size_t gi = 0; gi < inputs.size(); ++gi) {
    Tensor<double>& x = *inputs[gi].second;
    if (!x.same_shape(analytic[gi]))
      throw std::invalid_argument("fd_check: analytic grad shape mismatch for " + inputs[gi].first);
    GroupError ge{inputs[gi].first, 0.0, x.size()};
    for (int64_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      const double h = base_step * std::max(1.0, std::abs(orig));
      x[i] = orig + h;
      const double fp = forward();
      x[i] = orig - h;
      const double fm = forward();
      x[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("fd_check: non-finite objective during probing of " + ge.group);
      const double num = (fp - fm) / (2 * h);
      const double ana = analytic[gi][i];
      const double rel = std::abs(num - ana) / std::max(1e-6, std::abs(num) + std::abs(ana));
      ge.max_rel_err = std::max(ge.max_rel_err, rel);
    }
    report.groups.push_back(std::move(ge));
  }
  return report;
}

}  // namespace taylornet
