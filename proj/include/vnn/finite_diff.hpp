#pragma once

#include <functional>
#include <vector>

#include "vnn/errors.hpp"

namespace vnn {

// Central-difference gradient of a scalar function; the reference oracle for
// every backward pass in this project.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> theta,
    double h) {
  if (h <= 0.0) throw UsageError("finite_difference_gradient: h must be > 0");
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double fp = f(theta);
    theta[i] = saved - h;
    const double fm = f(theta);
    theta[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace vnn
