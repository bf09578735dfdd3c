#pragma once

// Dense row-major tensors, float for training and double for the
// finite-difference builds. Only rank 1 and 2 appear in practice.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "melle/rng.hpp"

namespace melle {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw std::invalid_argument("tensor: data/shape mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.size() == 1 ? shape[0] : shape.at(1); }

  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, T v) {
    Tensor t(std::move(s));
    for (T& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor gaussian(RngState& rng, std::vector<std::size_t> s) {
    Tensor t(std::move(s));
    for (T& x : t.data) x = static_cast<T>(rng.next_gaussian());
    return t;
  }
  static Tensor uniform(RngState& rng, std::vector<std::size_t> s, T lo, T hi) {
    Tensor t(std::move(s));
    for (T& x : t.data) x = lo + static_cast<T>(rng.next_uniform()) * (hi - lo);
    return t;
  }
  // Inverted-dropout mask: entries are 0 or 1/keep.
  static Tensor dropout_mask(RngState& rng, std::vector<std::size_t> s, double keep) {
    if (keep <= 0.0 || keep > 1.0) throw std::invalid_argument("dropout: keep must be in (0,1]");
    Tensor t(std::move(s));
    const T inv = static_cast<T>(1.0 / keep);
    for (T& x : t.data) x = (rng.next_uniform() <= keep) ? inv : T(0);
    return t;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "x" : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace melle
