#pragma once

// Reverse-mode autodiff over a linear tape. Ops append nodes in execution
// order, so walking the tape backwards is a valid topological order. With
// gradients disabled the same ops run eager and record nothing.

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "melle/kernels.hpp"
#include "melle/tensor.hpp"

namespace melle {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& val() const;
  std::size_t rows() const { return val().rows(); }
  std::size_t cols() const { return val().cols(); }
};

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backward;
    bool requires_grad = false;
  };

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }
  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
  const Node& node(int id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Appends a derived node. parents/backward are dropped when grads are off
  // or no parent needs them.
  Var<T> emit(Tensor<T> value, std::vector<int> parents,
              std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
      for (int p : parents)
        if (nodes_.at(p).requires_grad) n.requires_grad = true;
      if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
      }
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  // Gradient buffer for a node, zero-initialized on first touch.
  Tensor<T>& grad_buf(int id) {
    Tensor<T>& g = grads_.at(id);
    if (g.numel() == 0 && nodes_[id].value.numel() != 0)
      g = Tensor<T>::zeros(nodes_[id].value.shape);
    return g;
  }
  bool has_grad(int id) const { return grads_.at(id).numel() != 0; }

  void backward(const Var<T>& loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: var from another tape");
    if (value(loss.id).numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor<T>{});
    grad_buf(loss.id).data[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      if (!has_grad(id)) continue;
      n.backward(*this, id);
    }
  }

  // Gradient of the last backward() w.r.t. var; zeros when the var is off
  // every path to the loss.
  Tensor<T> grad(const Var<T>& v) const {
    if (v.tape != this) throw std::invalid_argument("grad: var from another tape");
    if (static_cast<std::size_t>(v.id) < grads_.size() && grads_[v.id].numel() != 0)
      return grads_[v.id];
    return Tensor<T>::zeros(nodes_.at(v.id).value.shape);
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::val() const {
  return tape->value(id);
}

namespace detail {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.val().shape_str() +
                                " vs " + b.val().shape_str());
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.val().shape);
  kern::add(a.val().data.data(), b.val().data.data(), out.data.data(), out.numel());
  return a.tape->emit(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    if (t.node(pa).requires_grad)
      kern::axpy(T(1), g.data.data(), t.grad_buf(pa).data.data(), g.numel());
    if (t.node(pb).requires_grad)
      kern::axpy(T(1), g.data.data(), t.grad_buf(pb).data.data(), g.numel());
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.val().shape);
  kern::sub(a.val().data.data(), b.val().data.data(), out.data.data(), out.numel());
  return a.tape->emit(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    if (t.node(pa).requires_grad)
      kern::axpy(T(1), g.data.data(), t.grad_buf(pa).data.data(), g.numel());
    if (t.node(pb).requires_grad)
      kern::axpy(T(-1), g.data.data(), t.grad_buf(pb).data.data(), g.numel());
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.val().shape);
  kern::mul(a.val().data.data(), b.val().data.data(), out.data.data(), out.numel());
  return a.tape->emit(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    const std::size_t n = g.numel();
    if (t.node(pa).requires_grad) {
      Tensor<T>& ga = t.grad_buf(pa);
      const Tensor<T>& bv = t.value(pb);
      for (std::size_t i = 0; i < n; ++i) ga.data[i] += g.data[i] * bv.data[i];
    }
    if (t.node(pb).requires_grad) {
      Tensor<T>& gb = t.grad_buf(pb);
      const Tensor<T>& av = t.value(pa);
      for (std::size_t i = 0; i < n; ++i) gb.data[i] += g.data[i] * av.data[i];
    }
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T s) {
  Tensor<T> out(a.val().shape);
  kern::scale(s, a.val().data.data(), out.data.data(), out.numel());
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id, s](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    kern::axpy(s, g.data.data(), t.grad_buf(pa).data.data(), g.numel());
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.val();
  for (T& v : out.data) v += s;
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    kern::axpy(T(1), g.data.data(), t.grad_buf(pa).data.data(), g.numel());
  });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return mul_scalar(a, T(-1));
}

// out[i,j] = m[i,j] + bias[j]
template <typename T>
Var<T> add_bias(Var<T> m, Var<T> bias) {
  const std::size_t rows = m.val().rows(), cols = m.val().shape.at(1);
  if (bias.val().numel() != cols) throw std::invalid_argument("add_bias: width mismatch");
  Tensor<T> out(m.val().shape);
  for (std::size_t i = 0; i < rows; ++i)
    kern::add(m.val().data.data() + i * cols, bias.val().data.data(),
              out.data.data() + i * cols, cols);
  return m.tape->emit(std::move(out), {m.id, bias.id},
                      [pm = m.id, pb = bias.id, rows, cols](Tape<T>& t, int id) {
                        const Tensor<T>& g = t.grad_buf(id);
                        if (t.node(pm).requires_grad)
                          kern::axpy(T(1), g.data.data(), t.grad_buf(pm).data.data(), g.numel());
                        if (t.node(pb).requires_grad) {
                          Tensor<T>& gb = t.grad_buf(pb);
                          for (std::size_t i = 0; i < rows; ++i)
                            kern::add(gb.data.data(), g.data.data() + i * cols, gb.data.data(), cols);
                        }
                      });
}

// ---- matmul ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.val();
  const auto& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0])
    throw std::invalid_argument("matmul: incompatible " + av.shape_str() + " * " + bv.shape_str());
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor<T> out({m, n});
  kern::gemm(false, false, m, n, k, T(1), av.data.data(), k, bv.data.data(), n, T(0),
             out.data.data(), n);
  return a.tape->emit(std::move(out), {a.id, b.id},
                      [pa = a.id, pb = b.id, m, k, n](Tape<T>& t, int id) {
                        const Tensor<T>& g = t.grad_buf(id);
                        if (t.node(pa).requires_grad)  // dA += dC * B^T
                          kern::gemm(false, true, m, k, n, T(1), g.data.data(), n,
                                     t.value(pb).data.data(), n, T(1),
                                     t.grad_buf(pa).data.data(), k);
                        if (t.node(pb).requires_grad)  // dB += A^T * dC
                          kern::gemm(true, false, k, n, m, T(1), t.value(pa).data.data(), k,
                                     g.data.data(), n, T(1), t.grad_buf(pb).data.data(), n);
                      });
}

// C = A * B^T with B stored n×k.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& av = a.val();
  const auto& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[1])
    throw std::invalid_argument("matmul_nt: incompatible " + av.shape_str() + " * " +
                                bv.shape_str() + "^T");
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[0];
  Tensor<T> out({m, n});
  kern::gemm(false, true, m, n, k, T(1), av.data.data(), k, bv.data.data(), k, T(0),
             out.data.data(), n);
  return a.tape->emit(std::move(out), {a.id, b.id},
                      [pa = a.id, pb = b.id, m, k, n](Tape<T>& t, int id) {
                        const Tensor<T>& g = t.grad_buf(id);
                        if (t.node(pa).requires_grad)  // dA += dC * B
                          kern::gemm(false, false, m, k, n, T(1), g.data.data(), n,
                                     t.value(pb).data.data(), k, T(1),
                                     t.grad_buf(pa).data.data(), k);
                        if (t.node(pb).requires_grad)  // dB += dC^T * A
                          kern::gemm(true, false, n, k, m, T(1), g.data.data(), n,
                                     t.value(pa).data.data(), k, T(1),
                                     t.grad_buf(pb).data.data(), k);
                      });
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(Var<T> a, std::vector<std::size_t> shape) {
  if (Tensor<T>::numel_of(shape) != a.val().numel())
    throw std::invalid_argument("reshape: numel mismatch");
  Tensor<T> out(std::move(shape), a.val().data);
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    kern::axpy(T(1), g.data.data(), t.grad_buf(pa).data.data(), g.numel());
  });
}

template <typename T>
Var<T> row_concat(Var<T> a, Var<T> b) {
  const auto& av = a.val();
  const auto& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[1])
    throw std::invalid_argument("row_concat: width mismatch");
  Tensor<T> out({av.shape[0] + bv.shape[0], av.shape[1]});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
  return a.tape->emit(std::move(out), {a.id, b.id},
                      [pa = a.id, pb = b.id, na = av.numel()](Tape<T>& t, int id) {
                        const Tensor<T>& g = t.grad_buf(id);
                        if (t.node(pa).requires_grad)
                          kern::axpy(T(1), g.data.data(), t.grad_buf(pa).data.data(), na);
                        if (t.node(pb).requires_grad)
                          kern::axpy(T(1), g.data.data() + na, t.grad_buf(pb).data.data(),
                                     g.numel() - na);
                      });
}

template <typename T>
Var<T> row_slice(Var<T> a, std::size_t r0, std::size_t r1) {
  const auto& av = a.val();
  if (av.ndim() != 2 || r0 > r1 || r1 > av.shape[0])
    throw std::invalid_argument("row_slice: bad range");
  const std::size_t cols = av.shape[1];
  Tensor<T> out({r1 - r0, cols});
  std::copy(av.data.begin() + r0 * cols, av.data.begin() + r1 * cols, out.data.begin());
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id, r0, cols](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    kern::axpy(T(1), g.data.data(), t.grad_buf(pa).data.data() + r0 * cols, g.numel());
  });
}

template <typename T>
Var<T> col_slice(Var<T> a, std::size_t c0, std::size_t c1) {
  const auto& av = a.val();
  if (av.ndim() != 2 || c0 > c1 || c1 > av.shape[1])
    throw std::invalid_argument("col_slice: bad range");
  const std::size_t rows = av.shape[0], cols = av.shape[1], w = c1 - c0;
  Tensor<T> out({rows, w});
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(av.data.begin() + i * cols + c0, av.data.begin() + i * cols + c1,
              out.data.begin() + i * w);
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id, c0, rows, cols, w](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    Tensor<T>& ga = t.grad_buf(pa);
    for (std::size_t i = 0; i < rows; ++i)
      kern::add(ga.data.data() + i * cols + c0, g.data.data() + i * w,
                ga.data.data() + i * cols + c0, w);
  });
}

template <typename T>
Var<T> col_concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("col_concat: empty");
  const std::size_t rows = parts[0].val().shape.at(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.val().shape.at(0) != rows) throw std::invalid_argument("col_concat: row mismatch");
    total += p.val().shape.at(1);
  }
  Tensor<T> out({rows, total});
  std::vector<int> ids;
  std::vector<std::size_t> offs, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.val().shape[1];
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p.val().data.begin() + i * w, p.val().data.begin() + (i + 1) * w,
                out.data.begin() + i * total + off);
    ids.push_back(p.id);
    offs.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return parts[0].tape->emit(
      std::move(out), ids, [ids, offs, widths, rows, total](Tape<T>& t, int id) {
        const Tensor<T>& g = t.grad_buf(id);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.node(ids[p]).requires_grad) continue;
          Tensor<T>& gp = t.grad_buf(ids[p]);
          for (std::size_t i = 0; i < rows; ++i)
            kern::add(gp.data.data() + i * widths[p], g.data.data() + i * total + offs[p],
                      gp.data.data() + i * widths[p], widths[p]);
        }
      });
}

template <typename T>
Var<T> gather_rows(Var<T> emb, const std::vector<std::size_t>& ids) {
  const auto& ev = emb.val();
  if (ev.ndim() != 2) throw std::invalid_argument("gather_rows: need 2-d table");
  const std::size_t cols = ev.shape[1];
  Tensor<T> out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= ev.shape[0]) throw std::invalid_argument("gather_rows: id out of range");
    std::copy(ev.data.begin() + ids[i] * cols, ev.data.begin() + (ids[i] + 1) * cols,
              out.data.begin() + i * cols);
  }
  return emb.tape->emit(std::move(out), {emb.id}, [pe = emb.id, ids, cols](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    Tensor<T>& ge = t.grad_buf(pe);
    for (std::size_t i = 0; i < ids.size(); ++i)
      kern::add(ge.data.data() + ids[i] * cols, g.data.data() + i * cols,
                ge.data.data() + ids[i] * cols, cols);
  });
}

// ---- elementwise unary ----

namespace detail {

// Generic unary: fwd(x) and dfdx(x, y) evaluated elementwise.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F fwd, D dfdx) {
  Tensor<T> out(a.val().shape);
  const auto& av = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(av.data[i]);
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id, dfdx](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    const Tensor<T>& x = t.value(pa);
    const Tensor<T>& y = t.value(id);
    Tensor<T>& ga = t.grad_buf(pa);
    for (std::size_t i = 0; i < g.numel(); ++i)
      ga.data[i] += g.data[i] * dfdx(x.data[i], y.data[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  return detail::unary(
      a,
      [](T x) {
        return T(0.5) * x * (T(1) + static_cast<T>(std::erf(static_cast<double>(x) / std::numbers::sqrt2)));
      },
      [](T x, T) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * std::numbers::pi);
        return static_cast<T>(cdf + xd * pdf);
      });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
  return detail::unary(
      a, [](T x) { return static_cast<T>(std::tanh(static_cast<double>(x))); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      a,
      [](T x) {
        const double xd = static_cast<double>(x);
        return static_cast<T>(xd >= 0 ? 1.0 / (1.0 + std::exp(-xd))
                                      : std::exp(xd) / (1.0 + std::exp(xd)));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp_op(Var<T> a) {
  return detail::unary(
      a, [](T x) { return static_cast<T>(std::exp(static_cast<double>(x))); },
      [](T, T y) { return y; });
}

// log(1 + e^x), evaluated without overflow.
template <typename T>
Var<T> softplus(Var<T> a) {
  return detail::unary(
      a,
      [](T x) {
        const double xd = static_cast<double>(x);
        return static_cast<T>(std::log1p(std::exp(-std::abs(xd))) + std::max(xd, 0.0));
      },
      [](T x, T) {
        const double xd = static_cast<double>(x);
        return static_cast<T>(xd >= 0 ? 1.0 / (1.0 + std::exp(-xd))
                                      : std::exp(xd) / (1.0 + std::exp(xd)));
      });
}

template <typename T>
Var<T> abs_op(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x < T(0) ? -x : x; },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return detail::unary(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tensor<T> out = Tensor<T>::scalar(kern::sum(a.val().data.data(), a.val().numel()));
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id](Tape<T>& t, int id) {
    const T g = t.grad_buf(id).data[0];
    Tensor<T>& ga = t.grad_buf(pa);
    for (T& v : ga.data) v += g;
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.val().numel()));
}

// ---- row-structured ops ----

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  const auto& av = a.val();
  if (av.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2-d");
  const std::size_t rows = av.shape[0], cols = av.shape[1];
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* x = av.data.data() + i * cols;
    T* y = out.data.data() + i * cols;
    T mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = static_cast<T>(std::exp(static_cast<double>(x[j] - mx)));
      denom += y[j];
    }
    const T inv = T(1) / denom;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  return a.tape->emit(std::move(out), {a.id}, [pa = a.id, rows, cols](Tape<T>& t, int id) {
    const Tensor<T>& g = t.grad_buf(id);
    const Tensor<T>& y = t.value(id);
    Tensor<T>& ga = t.grad_buf(pa);
    for (std::size_t i = 0; i < rows; ++i) {
      const T* gr = g.data.data() + i * cols;
      const T* yr = y.data.data() + i * cols;
      T s = kern::dot(gr, yr, cols);
      T* gar = ga.data.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) gar[j] += yr[j] * (gr[j] - s);
    }
  });
}

template <typename T>
Var<T> layernorm_rows(Var<T> a, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  const auto& av = a.val();
  if (av.ndim() != 2) throw std::invalid_argument("layernorm_rows: need 2-d");
  const std::size_t rows = av.shape[0], cols = av.shape[1];
  if (gain.val().numel() != cols || bias.val().numel() != cols)
    throw std::invalid_argument("layernorm_rows: gain/bias width mismatch");
  Tensor<T> out(av.shape);
  Tensor<T> xhat(av.shape);
  Tensor<T> inv_std({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    const T* x = av.data.data() + i * cols;
    T mean = kern::sum(x, cols) / static_cast<T>(cols);
    T var = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      const T d = x[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T istd = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var + eps)));
    inv_std.data[i] = istd;
    for (std::size_t j = 0; j < cols; ++j) {
      const T h = (x[j] - mean) * istd;
      xhat.data[i * cols + j] = h;
      out.data[i * cols + j] = h * gain.val().data[j] + bias.val().data[j];
    }
  }
  return a.tape->emit(
      std::move(out), {a.id, gain.id, bias.id},
      [pa = a.id, pg = gain.id, pb = bias.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std), rows, cols](Tape<T>& t, int id) {
        const Tensor<T>& g = t.grad_buf(id);
        const Tensor<T>& gv = t.value(pg);
        if (t.node(pg).requires_grad) {
          Tensor<T>& gg = t.grad_buf(pg);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              gg.data[j] += g.data[i * cols + j] * xhat.data[i * cols + j];
        }
        if (t.node(pb).requires_grad) {
          Tensor<T>& gb = t.grad_buf(pb);
          for (std::size_t i = 0; i < rows; ++i)
            kern::add(gb.data.data(), g.data.data() + i * cols, gb.data.data(), cols);
        }
        if (t.node(pa).requires_grad) {
          Tensor<T>& ga = t.grad_buf(pa);
          std::vector<T> dxhat(cols);
          for (std::size_t i = 0; i < rows; ++i) {
            const T* gr = g.data.data() + i * cols;
            const T* hr = xhat.data.data() + i * cols;
            T sum_d = T(0), sum_dh = T(0);
            for (std::size_t j = 0; j < cols; ++j) {
              dxhat[j] = gr[j] * gv.data[j];
              sum_d += dxhat[j];
              sum_dh += dxhat[j] * hr[j];
            }
            const T inv_n = T(1) / static_cast<T>(cols);
            T* gar = ga.data.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j)
              gar[j] += inv_std.data[i] * (dxhat[j] - inv_n * sum_d - hr[j] * inv_n * sum_dh);
          }
        }
      });
}

// ---- 1-d convolution over time, "same" zero padding ----
// x is T×Cin, w is Cout×(Cin*K) with taps fastest, bias is Cout. Odd K only.

template <typename T>
Var<T> conv1d_same(Var<T> x, Var<T> w, Var<T> bias, std::size_t kernel) {
  const auto& xv = x.val();
  const auto& wv = w.val();
  if (xv.ndim() != 2 || wv.ndim() != 2) throw std::invalid_argument("conv1d: need 2-d");
  if (kernel % 2 == 0) throw std::invalid_argument("conv1d: kernel must be odd");
  const std::size_t frames = xv.shape[0], cin = xv.shape[1];
  const std::size_t cout = wv.shape[0];
  if (wv.shape[1] != cin * kernel) throw std::invalid_argument("conv1d: weight shape mismatch");
  if (bias.val().numel() != cout) throw std::invalid_argument("conv1d: bias mismatch");
  const std::size_t pad = kernel / 2, kw = cin * kernel;

  Tensor<T> cols({frames, kw});
  for (std::size_t ti = 0; ti < frames; ++ti)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t u = 0; u < kernel; ++u) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(ti + u) - static_cast<std::ptrdiff_t>(pad);
        cols.data[ti * kw + c * kernel + u] =
            (src >= 0 && src < static_cast<std::ptrdiff_t>(frames)) ? xv.data[src * cin + c] : T(0);
      }

  Tensor<T> out({frames, cout});
  kern::gemm(false, true, frames, cout, kw, T(1), cols.data.data(), kw, wv.data.data(), kw, T(0),
             out.data.data(), cout);
  for (std::size_t ti = 0; ti < frames; ++ti)
    kern::add(out.data.data() + ti * cout, bias.val().data.data(), out.data.data() + ti * cout,
              cout);

  return x.tape->emit(
      std::move(out), {x.id, w.id, bias.id},
      [px = x.id, pw = w.id, pb = bias.id, cols = std::move(cols), frames, cin, cout, kernel, pad,
       kw](Tape<T>& t, int id) {
        const Tensor<T>& g = t.grad_buf(id);
        if (t.node(pb).requires_grad) {
          Tensor<T>& gb = t.grad_buf(pb);
          for (std::size_t ti = 0; ti < frames; ++ti)
            kern::add(gb.data.data(), g.data.data() + ti * cout, gb.data.data(), cout);
        }
        if (t.node(pw).requires_grad)  // dW += dY^T * cols
          kern::gemm(true, false, cout, kw, frames, T(1), g.data.data(), cout, cols.data.data(),
                     kw, T(1), t.grad_buf(pw).data.data(), kw);
        if (t.node(px).requires_grad) {
          Tensor<T> dcols({frames, kw});  // dcols = dY * W
          kern::gemm(false, false, frames, kw, cout, T(1), g.data.data(), cout,
                     t.value(pw).data.data(), kw, T(0), dcols.data.data(), kw);
          Tensor<T>& gx = t.grad_buf(px);
          for (std::size_t ti = 0; ti < frames; ++ti)
            for (std::size_t c = 0; c < cin; ++c)
              for (std::size_t u = 0; u < kernel; ++u) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(ti + u) - static_cast<std::ptrdiff_t>(pad);
                if (src >= 0 && src < static_cast<std::ptrdiff_t>(frames))
                  gx.data[src * cin + c] += dcols.data[ti * kw + c * kernel + u];
              }
        }
      });
}

}  // namespace melle
