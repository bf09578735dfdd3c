#pragma once

// Named gradient-verification scenarios shared by the `gradcheck` CLI command
// and the acceptance harness. Everything runs in double precision; inputs are
// placed away from non-differentiable points so central differences converge.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "melle/gradcheck.hpp"
#include "melle/losses.hpp"
#include "melle/model.hpp"
#include "melle/rng.hpp"
#include "melle/tape.hpp"
#include "melle/tensor.hpp"

namespace melle::gck {

struct SuiteResult {
  std::string component;  // ops | losses | model
  std::string scenario;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> gaussian(RngState& r, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = scale * r.next_gaussian();
  return t;
}

// Gaussian draws rejected until every element sits at least `margin` away
// from each listed kink, so a finite-difference probe never straddles one.
inline Tensor<double> off_kink(RngState& r, std::vector<std::size_t> shape,
                               const std::vector<double>& kinks, double margin = 0.05) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) {
    for (;;) {
      v = r.next_gaussian();
      bool ok = true;
      for (const double k : kinks) ok = ok && std::abs(v - k) >= margin;
      if (ok) break;
    }
  }
  return t;
}

// One FD pass over a scalar-valued graph of the given leaf tensors. The graph
// callable must read leaf values afresh each call (it gets new Vars bound to
// the current tensor contents).
using Graph = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline FdReport check_graph(std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                            const Graph& graph, std::size_t max_per_param = SIZE_MAX) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (auto& [name, t] : inputs) leaves.push_back(tape.leaf(t, true));
  tape.backward(graph(tape, leaves));

  std::vector<std::pair<std::string, Tensor<double>*>> params;
  std::vector<Tensor<double>> analytic;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.emplace_back(inputs[i].first, &inputs[i].second);
    analytic.push_back(tape.grad(leaves[i]));
  }
  auto value = [&]() {
    Tape<double> tp;
    tp.set_grad_enabled(false);
    std::vector<Var<double>> ls;
    ls.reserve(inputs.size());
    for (auto& [name, t] : inputs) ls.push_back(tp.leaf(t, false));
    return graph(tp, ls).val().data[0];
  };
  return fd_check(params, analytic, value, 1e-5, max_per_param);
}

inline SuiteResult run_scenario(const std::string& component, const std::string& scenario,
                                std::vector<std::pair<std::string, Tensor<double>>> inputs,
                                const Graph& graph, double tolerance,
                                std::size_t max_per_param = SIZE_MAX) {
  const FdReport rep = check_graph(inputs, graph, max_per_param);
  SuiteResult r;
  r.component = component;
  r.scenario = scenario;
  r.max_rel_err = rep.max_rel_err;
  r.tolerance = tolerance;
  r.checked = rep.checked;
  r.pass = rep.max_rel_err < tolerance;
  return r;
}

inline SuiteResult ops_pointwise() {
  RngState r(11);
  auto a = gaussian(r, {3, 4});
  auto b = gaussian(r, {3, 4});
  const auto w = gaussian(r, {3, 4});
  Graph g = [w](Tape<double>& t, const std::vector<Var<double>>& L) {
    const Var<double> a = L[0], b = L[1];
    const auto gate = mul(sigmoid(a), gelu(b));
    const auto drift = neg(sub(exp_op(mul_scalar(a, 0.3)), softplus(b)));
    const auto mixed = mul(tanh_op(add(gate, drift)), square(sub(a, b)));
    return mean_all(mul(add_scalar(mixed, 0.7), t.constant(w)));
  };
  return run_scenario("ops", "pointwise", {{"a", a}, {"b", b}}, g, 1e-6);
}

inline SuiteResult ops_kinked() {
  RngState r(12);
  // relu/abs kink at 0; clamp(−0.8, 0.8) kinks at the bounds.
  auto a = off_kink(r, {3, 4}, {0.0, -0.8, 0.8});
  auto b = off_kink(r, {3, 4}, {0.0});
  const auto w = gaussian(r, {3, 4});
  Graph g = [w](Tape<double>& t, const std::vector<Var<double>>& L) {
    const auto stack = add(relu(L[0]), add(abs_op(L[1]), clamp(L[0], -0.8, 0.8)));
    return sum_all(mul(stack, t.constant(w)));
  };
  return run_scenario("ops", "kinked", {{"a", a}, {"b", b}}, g, 1e-6);
}

inline SuiteResult ops_linear() {
  RngState r(13);
  auto emb = gaussian(r, {5, 6});
  auto w1 = gaussian(r, {6, 3});
  auto w2 = gaussian(r, {5, 3});
  auto bias = gaussian(r, {5});
  const auto w = gaussian(r, {2, 10});
  const std::vector<std::size_t> ids = {3, 0, 4, 2};
  Graph g = [w, ids](Tape<double>& t, const std::vector<Var<double>>& L) {
    const auto x = gather_rows(L[0], ids);        // 4×6
    const auto y = matmul(x, L[1]);               // 4×3
    const auto z = add_bias(matmul_nt(y, L[2]), L[3]);  // 4×5
    return sum_all(mul(reshape(z, {2, 10}), t.constant(w)));
  };
  return run_scenario("ops", "linear",
                      {{"emb", emb}, {"w1", w1}, {"w2", w2}, {"bias", bias}}, g, 1e-6);
}

inline SuiteResult ops_slices() {
  RngState r(14);
  auto a = gaussian(r, {3, 4});
  auto b = gaussian(r, {2, 4});
  const auto w = gaussian(r, {3, 6});
  Graph g = [w](Tape<double>& t, const std::vector<Var<double>>& L) {
    const auto rc = row_concat(L[0], L[1]);  // 5×4
    const auto s = row_slice(rc, 1, 4);      // 3×4
    const auto c1 = col_slice(s, 0, 2);
    const auto c2 = col_slice(s, 2, 4);
    // c2 appears twice so fan-out accumulation is exercised too.
    return mean_all(mul(col_concat<double>({c2, c1, c2}), t.constant(w)));
  };
  return run_scenario("ops", "slices", {{"a", a}, {"b", b}}, g, 1e-6);
}

inline SuiteResult ops_norms() {
  RngState r(15);
  auto a = gaussian(r, {4, 6});
  auto gain = gaussian(r, {6});
  auto bias = gaussian(r, {6});
  const auto w = gaussian(r, {4, 6});
  Graph g = [w](Tape<double>& t, const std::vector<Var<double>>& L) {
    const auto sm = softmax_rows(L[0]);
    const auto ln = layernorm_rows(L[0], L[1], L[2]);
    return sum_all(mul(add(sm, ln), t.constant(w)));
  };
  return run_scenario("ops", "norms", {{"a", a}, {"gain", gain}, {"bias", bias}}, g, 1e-6);
}

inline SuiteResult ops_conv() {
  RngState r(16);
  auto x = gaussian(r, {6, 3});       // T×Cin
  auto w = gaussian(r, {4, 3 * 5});   // Cout×(Cin·K)
  auto bias = gaussian(r, {4});
  const auto mixw = gaussian(r, {6, 4});
  Graph g = [mixw](Tape<double>& t, const std::vector<Var<double>>& L) {
    return sum_all(mul(conv1d_same(L[0], L[1], L[2], 5), t.constant(mixw)));
  };
  return run_scenario("ops", "conv", {{"x", x}, {"w", w}, {"bias", bias}}, g, 1e-6);
}

inline SuiteResult losses_combined() {
  RngState r(17);
  const std::size_t frames = 4, dim = 6, red = 2;
  // Keep the L1 differences and flux deltas away from their kinks: predictions
  // are the target plus an offset of magnitude ≥ 0.1.
  const auto y = gaussian(r, {frames, dim});
  auto offs = [&](double lo, double hi) {
    Tensor<double> t({frames, dim});
    for (double& v : t.data) {
      const double m = lo + (hi - lo) * r.next_uniform();
      v = r.next_uniform() < 0.5 ? -m : m;
    }
    return t;
  };
  auto shifted = [&](const Tensor<double>& base, const Tensor<double>& off) {
    Tensor<double> t = base;
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] += off.data[i];
    return t;
  };
  auto y_prime = shifted(y, offs(0.1, 0.5));
  auto y_dprime = shifted(y, offs(0.1, 0.5));
  // flux compares mu_t with y_{t−1}: build mu = y shifted one frame + offset.
  Tensor<double> prev({frames, dim});
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      prev.data[i * dim + j] = i == 0 ? 0.0 : y.data[(i - 1) * dim + j];
  auto mu = shifted(prev, offs(0.1, 0.5));
  auto logvar = gaussian(r, {frames / red, dim * red}, 0.5);
  auto logits = gaussian(r, {frames / red});
  const std::vector<double> stop_targets = {0.0, 1.0};

  const Tensor<double> y_t = y;
  Graph g = [y_t, stop_targets, frames, dim, red](Tape<double>& t,
                                                  const std::vector<Var<double>>& L) {
    const Var<double> yv = t.constant(y_t);
    const Var<double> yg = t.constant(
        Tensor<double>({frames / red, dim * red},
                       std::vector<double>(y_t.data.begin(), y_t.data.end())));
    const auto reg = loss::regression(yv, L[0], L[1]);
    const auto klv = loss::kl(reshape(L[2], {frames / red, dim * red}), L[3], yg);
    const auto fx = loss::flux(L[2], yv);
    const auto st = loss::stop(L[4], stop_targets);
    loss::Weights<double> w;
    w.lambda = 0.3;
    w.beta = 0.7;
    w.gamma = 1.1;
    return loss::combine(reg, klv, fx, st, w);
  };
  return run_scenario("losses", "combined",
                      {{"y_prime", y_prime},
                       {"y_dprime", y_dprime},
                       {"mu", mu},
                       {"logvar", logvar},
                       {"stop_logits", logits}},
                      g, 1e-6);
}

inline SuiteResult model_end_to_end() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ffn = 32;
  cfg.dropout = 0.1;
  cfg.reduction = 2;
  cfg.vocab_size = 5;
  cfg.postnet_channels = 8;
  cfg.postnet_kernel = 3;
  cfg.postnet_blocks = 2;

  Model<double> m = Model<double>::init(cfg, 61);
  // Zero-init params sit on ReLU kinks (the all-zero begin group feeds the
  // pre-net); nudge everything off them.
  RngState noise(62);
  for (auto& [name, t] : m.params)
    for (double& v : t.data) v += 0.02 * noise.next_gaussian();

  const std::vector<std::size_t> tokens = {3, 4, 1};
  RngState tr(63);
  Tensor<double> target({4, 80});
  for (double& v : target.data) v = 0.5 * tr.next_gaussian();
  const std::vector<double> stops = {0.0, 1.0};
  loss::Weights<double> w;
  w.lambda = 0.1;
  w.beta = 0.5;
  w.gamma = 1.0;
  const RngState fwd_rng(777);

  auto objective = [&](Tape<double>& tape, Model<double>::Ctx& c) {
    const auto out = m.forward_teacher_forced(c, tokens, target, LatentMode::sample);
    const Var<double> yv = tape.constant(target);
    const Var<double> reg = loss::regression(yv, out.y_prime, out.y_dprime);
    const Var<double> yg = tape.constant(
        Tensor<double>({2, 160}, std::vector<double>(target.data.begin(), target.data.end())));
    const Var<double> klv = loss::kl(out.latents.mu, out.latents.logvar, yg);
    const Var<double> fx = loss::flux(reshape(out.latents.mu, {4, 80}), yv);
    const Var<double> st = loss::stop(out.stop_logits, stops);
    return loss::combine(reg, klv, fx, st, w);
  };

  Tape<double> tape;
  auto c = m.ctx(tape, fwd_rng, true);
  tape.backward(objective(tape, c));
  auto params = m.named_params();
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, t] : params) analytic.push_back(tape.grad(c.leaves.at(name)));

  auto value = [&]() {
    Tape<double> tp;
    tp.set_grad_enabled(false);
    auto cx = m.ctx(tp, fwd_rng, true);
    return objective(tp, cx).val().data[0];
  };
  const FdReport rep = fd_check(params, analytic, value, 1e-5, 4);
  SuiteResult r;
  r.component = "model";
  r.scenario = "end_to_end";
  r.max_rel_err = rep.max_rel_err;
  r.tolerance = 1e-4;
  r.checked = rep.checked;
  r.pass = rep.max_rel_err < r.tolerance;
  return r;
}

}  // namespace detail

// component: "ops", "losses", "model", or "all".
inline std::vector<SuiteResult> run_suite(const std::string& component) {
  std::vector<SuiteResult> out;
  const bool all = component == "all";
  if (all || component == "ops") {
    out.push_back(detail::ops_pointwise());
    out.push_back(detail::ops_kinked());
    out.push_back(detail::ops_linear());
    out.push_back(detail::ops_slices());
    out.push_back(detail::ops_norms());
    out.push_back(detail::ops_conv());
  }
  if (all || component == "losses") out.push_back(detail::losses_combined());
  if (all || component == "model") out.push_back(detail::model_end_to_end());
  if (out.empty())
    throw std::invalid_argument("gradcheck: unknown component '" + component +
                                "' (expected ops, losses, model, or all)");
  return out;
}

}  // namespace melle::gck
