#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>

#include "aifind/encoder.hpp"

namespace testing {

// Per-element relative error at the best step of a ladder of central differences.
inline double best_step_error(const std::function<double()>& loss, aifind::Mat& tensor, Eigen::Index i,
                              double analytic, double floor = 1e-6) {
  double best = INFINITY;
  for (double h : {1e-3, 1e-4, 1e-5, 1e-6, 1e-7}) {
    const double numeric = aifind::central_difference(loss, tensor, i, h);
    best = std::min(best, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor}));
  }
  return best;
}

inline double best_step_error(const std::function<double()>& loss, aifind::Mat& tensor, const aifind::Mat& grad,
                              double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < tensor.size(); ++i)
    worst = std::max(worst, best_step_error(loss, tensor, i, grad.data()[i], floor));
  return worst;
}

}  // namespace testing
