#include <cmath>
#include <cstddef>
#include <vector>

#include "doctest.h"
#include "melle/gradcheck.hpp"
#include "melle/losses.hpp"
#include "melle/model.hpp"
#include "melle/rng.hpp"
#include "melle/tape.hpp"
#include "melle/tensor.hpp"

using melle::LatentMode;
using melle::Model;
using melle::ModelConfig;
using melle::RngState;
using melle::Tape;
using melle::Tensor;
using melle::Var;

namespace {

ModelConfig tiny_config(std::size_t reduction = 1) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_ffn = 64;
  c.dropout = 0.1;
  c.reduction = reduction;
  c.vocab_size = 8;
  c.postnet_channels = 16;
  c.postnet_kernel = 5;
  c.postnet_blocks = 3;
  return c;
}

template <typename T>
Tensor<T> random_target(std::uint64_t seed, std::size_t t) {
  RngState rng(seed);
  Tensor<T> y = Tensor<T>::gaussian(rng, {t, 80});
  for (T& v : y.data) v *= T(0.5);
  return y;
}

bool same_data(const Tensor<double>& a, const Tensor<double>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("model init: determinism, zero tails, scaled embeddings") {
  const ModelConfig cfg = tiny_config();
  const Model<double> a = Model<double>::init(cfg, 11);
  const Model<double> b = Model<double>::init(cfg, 11);
  const Model<double> c = Model<double>::init(cfg, 12);

  REQUIRE(a.params.size() == b.params.size());
  for (const auto& [name, t] : a.params) CHECK(same_data(t, b.params.at(name)));
  bool any_diff = false;
  for (const auto& [name, t] : a.params)
    if (!same_data(t, c.params.at(name))) any_diff = true;
  CHECK(any_diff);

  // Residual tails start at zero so both refinement stages begin as identity.
  for (double v : a.params.at("latmlp.w3").data) CHECK(v == 0.0);
  for (double v : a.params.at("latmlp.b3").data) CHECK(v == 0.0);
  const std::string last = "post." + std::to_string(cfg.postnet_blocks - 1) + ".";
  for (double v : a.params.at(last + "w").data) CHECK(v == 0.0);

  // Embedding table drawn at scale 0.1.
  const Tensor<double>& emb = a.params.at("text_emb");
  double ss = 0.0;
  for (double v : emb.data) ss += v * v;
  const double stddev = std::sqrt(ss / static_cast<double>(emb.numel()));
  CHECK(stddev > 0.05);
  CHECK(stddev < 0.2);

  // Layer norms start as identity transforms.
  for (double v : a.params.at("dec.0.ln1.g").data) CHECK(v == 1.0);
  for (double v : a.params.at("ln_f.b").data) CHECK(v == 0.0);
}

TEST_CASE("model config validation rejects bad settings") {
  ModelConfig c = tiny_config();
  c.n_mels = 64;
  CHECK_THROWS_AS(Model<double>::init(c, 1), std::invalid_argument);
  c = tiny_config();
  c.d_model = 33;  // not divisible by heads
  CHECK_THROWS_AS(Model<double>::init(c, 1), std::invalid_argument);
  c = tiny_config();
  c.postnet_kernel = 4;
  CHECK_THROWS_AS(Model<double>::init(c, 1), std::invalid_argument);
  c = tiny_config();
  c.vocab_size = 2;
  CHECK_THROWS_AS(Model<double>::init(c, 1), std::invalid_argument);
}

TEST_CASE("teacher-forced forward produces the declared shapes") {
  for (std::size_t r : {std::size_t(1), std::size_t(2)}) {
    const ModelConfig cfg = tiny_config(r);
    const Model<double> m = Model<double>::init(cfg, 3);
    const std::vector<std::size_t> tokens = {3, 4, 1};
    const Tensor<double> target = random_target<double>(21, 6);

    Tape<double> tape;
    auto c = m.ctx(tape, RngState(5), false);
    const auto out = m.forward_teacher_forced(c, tokens, target, LatentMode::sample);

    const std::size_t steps = 6 / r;
    CHECK(out.y_prime.rows() == 6);
    CHECK(out.y_prime.cols() == 80);
    CHECK(out.y_dprime.rows() == 6);
    CHECK(out.y_dprime.cols() == 80);
    CHECK(out.stop_logits.rows() == steps);
    CHECK(out.stop_logits.cols() == 1);
    CHECK(out.latents.mu.rows() == steps);
    CHECK(out.latents.mu.cols() == r * 80);
    CHECK(out.latents.logvar.rows() == steps);
    CHECK(out.e.rows() == steps);
    CHECK(out.e.cols() == cfg.d_model);
    CHECK(out.y_dprime.val().all_finite());
  }
}

TEST_CASE("step counts follow the reduction factor") {
  for (std::size_t r : {std::size_t(1), std::size_t(2), std::size_t(4)}) {
    const Model<double> m = Model<double>::init(tiny_config(r), 3);
    const Tensor<double> target = random_target<double>(22, 8);
    Tape<double> tape;
    auto c = m.ctx(tape, RngState(5), false);
    const auto out = m.forward_teacher_forced(c, {3, 4, 1}, target, LatentMode::mean);
    CHECK(out.stop_logits.rows() == 8 / r);
    CHECK(out.y_prime.rows() == 8);
  }
  // Length not a multiple of the reduction is the caller's bug.
  const Model<double> m = Model<double>::init(tiny_config(4), 3);
  Tape<double> tape;
  auto c = m.ctx(tape, RngState(5), false);
  CHECK_THROWS_AS(m.forward_teacher_forced(c, {3, 4, 1}, random_target<double>(23, 6),
                                           LatentMode::mean),
                  std::invalid_argument);
}

TEST_CASE("teacher inputs shift groups by one step") {
  const Model<double> m = Model<double>::init(tiny_config(2), 3);
  Tensor<double> target({4, 80});
  for (std::size_t i = 0; i < target.numel(); ++i)
    target.data[i] = static_cast<double>(i);
  const Tensor<double> in = m.teacher_inputs(target);
  REQUIRE(in.rows() == 2);
  REQUIRE(in.cols() == 160);
  for (std::size_t j = 0; j < 160; ++j) {
    CHECK(in.at(0, j) == 0.0);                          // begin-of-speech group
    CHECK(in.at(1, j) == static_cast<double>(j));       // frames 0..1 flattened
  }
}

TEST_CASE("residual heads are exact identities at init") {
  const Model<double> m = Model<double>::init(tiny_config(2), 17);
  Tape<double> tape;
  auto c = m.ctx(tape, RngState(9), false);
  const auto out =
      m.forward_teacher_forced(c, {3, 5, 1}, random_target<double>(31, 6), LatentMode::mean);
  // latmlp tail is zero-initialized: y' is exactly the ungrouped latent.
  CHECK(out.y_prime.val().data == out.latents.z.val().data);
  // post-net tail is zero-initialized: the refinement adds exactly nothing.
  CHECK(same_data(out.y_dprime.val(), out.y_prime.val()));
}

TEST_CASE("latent mean mode is the zero-noise path") {
  const Model<double> m = Model<double>::init(tiny_config(), 17);
  Tape<double> tape;
  auto c = m.ctx(tape, RngState(9), false);
  const auto mean_out =
      m.forward_teacher_forced(c, {3, 5, 1}, random_target<double>(33, 4), LatentMode::mean);
  CHECK(same_data(mean_out.latents.z.val(), mean_out.latents.mu.val()));

  Tape<double> tape2;
  auto c2 = m.ctx(tape2, RngState(9), false);
  const auto samp_out =
      m.forward_teacher_forced(c2, {3, 5, 1}, random_target<double>(33, 4), LatentMode::sample);
  CHECK_FALSE(same_data(samp_out.latents.z.val(), samp_out.latents.mu.val()));
}

TEST_CASE("latent sampling matches the predicted moments") {
  const ModelConfig cfg = tiny_config();
  Model<double> m = Model<double>::init(cfg, 4);
  // Pin the latent head: mu = 0.3, logvar = -0.4 regardless of input.
  m.params["latent.w"] = Tensor<double>::zeros({cfg.d_model, 160});
  Tensor<double> b({160});
  for (std::size_t j = 0; j < 80; ++j) b.data[j] = 0.3;
  for (std::size_t j = 80; j < 160; ++j) b.data[j] = -0.4;
  m.params["latent.b"] = b;

  Tape<double> tape;
  auto c = m.ctx(tape, RngState(1234), false);
  const Var<double> e = tape.constant(Tensor<double>::zeros({200, cfg.d_model}));
  const auto st = m.latent_sample(c, e, LatentMode::sample);

  double sum = 0.0, sum2 = 0.0;
  const std::size_t n = st.z.val().numel();
  for (double v : st.z.val().data) {
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum2 / static_cast<double>(n) - mean * mean;
  CHECK(std::abs(mean - 0.3) < 0.03);
  CHECK(std::abs(var - std::exp(-0.4)) < 0.05 * std::exp(-0.4));
}

TEST_CASE("logvar respects the configured clamp") {
  ModelConfig cfg = tiny_config();
  Model<double> m = Model<double>::init(cfg, 4);
  Tensor<double> b({160});
  for (std::size_t j = 80; j < 160; ++j) b.data[j] = 50.0;  // way past the max
  m.params["latent.w"] = Tensor<double>::zeros({cfg.d_model, 160});
  m.params["latent.b"] = b;
  Tape<double> tape;
  auto c = m.ctx(tape, RngState(1), false);
  const auto st =
      m.latent_sample(c, tape.constant(Tensor<double>::zeros({3, cfg.d_model})), LatentMode::mean);
  for (double v : st.logvar.val().data) CHECK(v <= cfg.logvar_max);
}

TEST_CASE("causal mask: later targets cannot influence earlier steps") {
  const Model<double> m = Model<double>::init(tiny_config(), 23);
  const std::vector<std::size_t> tokens = {3, 6, 4, 1};
  Tensor<double> target = random_target<double>(41, 8);

  Tape<double> t1;
  auto c1 = m.ctx(t1, RngState(7), false);
  const auto base = m.forward_teacher_forced(c1, tokens, target, LatentMode::mean);

  Tensor<double> bumped = target;
  for (std::size_t j = 0; j < 80; ++j) bumped.at(5, j) += 1.0;
  Tape<double> t2;
  auto c2 = m.ctx(t2, RngState(7), false);
  const auto pert = m.forward_teacher_forced(c2, tokens, bumped, LatentMode::mean);

  // Frame 5 first enters as decoder input at step 6, so steps 0..5 are
  // untouched and at least one later step moves.
  for (std::size_t t = 0; t <= 5; ++t) {
    for (std::size_t j = 0; j < 80; ++j)
      CHECK(base.latents.mu.val().at(t, j) == pert.latents.mu.val().at(t, j));
    CHECK(base.stop_logits.val().at(t, 0) == pert.stop_logits.val().at(t, 0));
  }
  bool later_moved = false;
  for (std::size_t t = 6; t < 8 && !later_moved; ++t)
    for (std::size_t j = 0; j < 80; ++j)
      if (base.latents.mu.val().at(t, j) != pert.latents.mu.val().at(t, j)) later_moved = true;
  CHECK(later_moved);
}

TEST_CASE("text tokens influence the acoustic outputs") {
  const Model<double> m = Model<double>::init(tiny_config(), 23);
  const Tensor<double> target = random_target<double>(43, 4);
  Tape<double> t1;
  auto c1 = m.ctx(t1, RngState(7), false);
  const auto a = m.forward_teacher_forced(c1, {3, 6, 1}, target, LatentMode::mean);
  Tape<double> t2;
  auto c2 = m.ctx(t2, RngState(7), false);
  const auto b = m.forward_teacher_forced(c2, {3, 7, 1}, target, LatentMode::mean);
  CHECK_FALSE(same_data(a.latents.mu.val(), b.latents.mu.val()));
}

TEST_CASE("forward is reproducible from its rng and diverges across rngs") {
  const Model<double> m = Model<double>::init(tiny_config(), 29);
  const std::vector<std::size_t> tokens = {3, 4, 1};
  const Tensor<double> target = random_target<double>(51, 4);

  auto run = [&](std::uint64_t rng_seed, bool train) {
    Tape<double> tape;
    auto c = m.ctx(tape, RngState(rng_seed), train);
    return m.forward_teacher_forced(c, tokens, target, LatentMode::sample).y_dprime.val();
  };
  CHECK(same_data(run(100, true), run(100, true)));
  CHECK_FALSE(same_data(run(100, true), run(101, true)));
}

TEST_CASE("pre-net dropout stays stochastic in eval mode") {
  const Model<double> m = Model<double>::init(tiny_config(), 29);
  const Tensor<double> target = random_target<double>(53, 4);
  auto run = [&](std::uint64_t rng_seed) {
    Tape<double> tape;
    auto c = m.ctx(tape, RngState(rng_seed), false);
    return m.forward_teacher_forced(c, {3, 4, 1}, target, LatentMode::mean).y_prime.val();
  };
  // Mean-mode eval removes every randomness source except the pre-net masks.
  CHECK_FALSE(same_data(run(200), run(201)));
}

TEST_CASE("forward rejects malformed inputs") {
  const Model<double> m = Model<double>::init(tiny_config(), 1);
  Tape<double> tape;
  auto c = m.ctx(tape, RngState(1), false);
  CHECK_THROWS_AS(
      m.forward_teacher_forced(c, {}, random_target<double>(1, 4), LatentMode::mean),
      std::invalid_argument);
  CHECK_THROWS_AS(m.forward_teacher_forced(c, {3, 99}, random_target<double>(1, 4),
                                           LatentMode::mean),
                  std::invalid_argument);  // token id beyond the vocab
  Tensor<double> bad({4, 40});
  CHECK_THROWS_AS(m.forward_teacher_forced(c, {3}, bad, LatentMode::mean),
                  std::invalid_argument);
}

TEST_CASE("end-to-end gradients agree with finite differences") {
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
  // Nudge every parameter off special points (exact zeros put ReLU inputs of
  // the all-zero begin group right on the kink, which finite differences
  // cannot straddle).
  RngState noise(62);
  for (auto& [name, t] : m.params)
    for (double& v : t.data) v += 0.02 * noise.next_gaussian();

  const std::vector<std::size_t> tokens = {3, 4, 1};
  const Tensor<double> target = random_target<double>(63, 4);
  const std::vector<double> stops = {0.0, 1.0};
  melle::loss::Weights<double> w;
  w.lambda = 0.1;
  w.beta = 0.5;
  w.gamma = 1.0;
  const RngState fwd_rng(777);

  auto objective = [&](Tape<double>& tape, Model<double>::Ctx& c) {
    const auto out = m.forward_teacher_forced(c, tokens, target, LatentMode::sample);
    const Var<double> yv = tape.constant(target);
    const Var<double> reg = melle::loss::regression(yv, out.y_prime, out.y_dprime);
    // KL prior mean is the grouped target; flux compares ungrouped frames.
    const Var<double> yg = tape.constant(
        Tensor<double>({2, 160}, std::vector<double>(target.data.begin(), target.data.end())));
    const Var<double> klv = melle::loss::kl(out.latents.mu, out.latents.logvar, yg);
    const Var<double> fx = melle::loss::flux(reshape(out.latents.mu, {4, 80}), yv);
    const Var<double> st = melle::loss::stop(out.stop_logits, stops);
    return melle::loss::combine(reg, klv, fx, st, w);
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
  const melle::FdReport rep = melle::fd_check(params, analytic, value, 1e-5, 4);
  CAPTURE(rep.worst_param);
  CAPTURE(rep.worst_index);
  CHECK(rep.max_rel_err < 1e-4);
}
