#pragma once

// Central-difference verification of tape gradients. The eval callable must
// recompute the loss from the *current* contents of the parameter tensors,
// with every stochastic choice (noise, masks) frozen across calls.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "melle/tensor.hpp"

namespace melle {

inline double fd_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// params[i].second and analytic[i] are shape-matched. When a parameter has
// more than max_per_param elements a deterministic stride subsample is used.
template <typename Eval>
FdReport fd_check(const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                  const std::vector<Tensor<double>>& analytic, Eval&& eval,
                  double h = 1e-5, std::size_t max_per_param = SIZE_MAX) {
  FdReport rep;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& theta = *params[p].second;
    const std::size_t n = theta.numel();
    const std::size_t step = n <= max_per_param ? 1 : (n + max_per_param - 1) / max_per_param;
    for (std::size_t i = 0; i < n; i += step) {
      const double x0 = theta.data[i];
      theta.data[i] = x0 + h;
      const double fp = eval();
      theta.data[i] = x0 - h;
      const double fm = eval();
      theta.data[i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = fd_rel_err(analytic[p].data[i], fd);
      ++rep.checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_param = params[p].first;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

}  // namespace melle
