#pragma once

// The four training losses and their weighted combination. Raw formulas are
// plain sums; with normalize=true each term is divided by its element count
// (frame losses by T*80, the stop term by the step count) so the loss weights
// stay meaningful across utterance lengths.

#include <stdexcept>
#include <vector>

#include "melle/tape.hpp"

namespace melle::loss {

template <typename T>
struct Weights {
  T lambda = T(0);   // kl
  T beta = T(0.5);   // flux
  T gamma = T(1.0);  // stop
};

template <typename T>
struct Breakdown {
  T reg = 0, kl = 0, flux = 0, stop = 0, total = 0;
  Weights<T> weights;
};

// |y-y'|_1 + |y-y'|_2^2 + |y-y''|_1 + |y-y''|_2^2
template <typename T>
Var<T> regression(Var<T> y, Var<T> y_prime, Var<T> y_dprime, bool normalize = true) {
  if (!y.val().same_shape(y_prime.val()) || !y.val().same_shape(y_dprime.val()))
    throw std::invalid_argument("regression loss: shape mismatch");
  Var<T> d1 = sub(y, y_prime);
  Var<T> d2 = sub(y, y_dprime);
  Var<T> total = add(add(sum_all(abs_op(d1)), sum_all(square(d1))),
                     add(sum_all(abs_op(d2)), sum_all(square(d2))));
  if (normalize) total = mul_scalar(total, T(1) / static_cast<T>(y.val().numel()));
  return total;
}

// Closed-form KL of N(mu, diag(exp(logvar))) against the prior N(y, I):
// 1/2 * sum(exp(logvar) + (mu-y)^2 - 1 - logvar).
template <typename T>
Var<T> kl(Var<T> mu, Var<T> logvar, Var<T> y, bool normalize = true) {
  if (!mu.val().same_shape(logvar.val()) || !mu.val().same_shape(y.val()))
    throw std::invalid_argument("kl loss: shape mismatch");
  Var<T> inner = sub(add(exp_op(logvar), square(sub(mu, y))), logvar);
  Var<T> s = mul_scalar(add_scalar(sum_all(inner), -static_cast<T>(mu.val().numel())), T(0.5));
  if (normalize) s = mul_scalar(s, T(1) / static_cast<T>(mu.val().numel()));
  return s;
}

// -sum_{t>=1} |mu_t - y_{t-1}|_1 over consecutive frames. Zero when fewer
// than two frames.
template <typename T>
Var<T> flux(Var<T> mu_frames, Var<T> y_frames, bool normalize = true) {
  if (!mu_frames.val().same_shape(y_frames.val()))
    throw std::invalid_argument("flux loss: shape mismatch");
  const std::size_t frames = mu_frames.val().rows();
  if (frames < 2) return mu_frames.tape->constant(Tensor<T>::scalar(T(0)));
  Var<T> head = row_slice(mu_frames, 1, frames);
  Var<T> prev = row_slice(y_frames, 0, frames - 1);
  Var<T> s = neg(sum_all(abs_op(sub(head, prev))));
  if (normalize) s = mul_scalar(s, T(1) / static_cast<T>(mu_frames.val().numel()));
  return s;
}

// Weighted binary cross-entropy on logits, numerically stable:
// pos_weight*t*softplus(-x) + (1-t)*softplus(x).
template <typename T>
Var<T> stop(Var<T> logits, const std::vector<T>& targets, T pos_weight = T(100),
            bool normalize = true) {
  if (logits.val().numel() != targets.size())
    throw std::invalid_argument("stop loss: length mismatch");
  std::size_t positives = 0;
  for (T t : targets) {
    if (t != T(0) && t != T(1)) throw std::invalid_argument("stop loss: targets must be 0/1");
    positives += t == T(1);
  }
  if (positives != 1) throw std::invalid_argument("stop loss: expected exactly one positive target");

  Tensor<T> pos(logits.val().shape), negw(logits.val().shape);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    pos.data[i] = pos_weight * targets[i];
    negw.data[i] = T(1) - targets[i];
  }
  Tape<T>& tape = *logits.tape;
  Var<T> s = add(sum_all(mul(softplus(neg(logits)), tape.constant(std::move(pos)))),
                 sum_all(mul(softplus(logits), tape.constant(std::move(negw)))));
  if (normalize) s = mul_scalar(s, T(1) / static_cast<T>(targets.size()));
  return s;
}

// total = reg + lambda*kl + beta*flux + gamma*stop
template <typename T>
Var<T> combine(Var<T> reg, Var<T> kl_term, Var<T> flux_term, Var<T> stop_term,
               const Weights<T>& w) {
  return add(add(reg, mul_scalar(kl_term, w.lambda)),
             add(mul_scalar(flux_term, w.beta), mul_scalar(stop_term, w.gamma)));
}

}  // namespace melle::loss
