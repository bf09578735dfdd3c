#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "melle/tensor.hpp"

namespace melle {

template <typename T>
double global_grad_norm(const std::map<std::string, Tensor<T>>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (T v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

template <typename T>
void clip_grad_norm(std::map<std::string, Tensor<T>>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm || norm == 0.0) return;
  const T s = static_cast<T>(max_norm / norm);
  for (auto& [name, g] : grads)
    for (T& v : g.data) v *= s;
}

// AdamW with decoupled weight decay. Moment state is keyed by parameter name
// so it serializes in a stable order.
template <typename T>
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t t = 0;
  std::map<std::string, Tensor<T>> m, v;

  void step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
            const std::map<std::string, Tensor<T>>& grads, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [name, theta] : params) {
      const auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor<T>& g = it->second;
      if (!g.same_shape(*theta))
        throw std::invalid_argument("adamw: grad shape mismatch for " + name);
      Tensor<T>& mi = m.try_emplace(name, Tensor<T>::zeros(theta->shape)).first->second;
      Tensor<T>& vi = v.try_emplace(name, Tensor<T>::zeros(theta->shape)).first->second;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double gi = static_cast<double>(g.data[i]);
        const double mn = beta1 * static_cast<double>(mi.data[i]) + (1.0 - beta1) * gi;
        const double vn = beta2 * static_cast<double>(vi.data[i]) + (1.0 - beta2) * gi * gi;
        mi.data[i] = static_cast<T>(mn);
        vi.data[i] = static_cast<T>(vn);
        const double update = (mn / bc1) / (std::sqrt(vn / bc2) + eps);
        const double p = static_cast<double>(theta->data[i]);
        theta->data[i] = static_cast<T>(p - lr * (update + weight_decay * p));
      }
    }
  }
};

}  // namespace melle
