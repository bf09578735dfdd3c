// Release acceptance harness. Runs the nine criteria end to end against the
// library and the operator CLI, printing one [PASS]/[FAIL] line per criterion
// with the measured numbers, and exits nonzero if any fail.
//
// Usage: melle_accept <path to melle CLI> [scratch dir]

#include <sys/wait.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "melle/audio.hpp"
#include "melle/gradcheck_suite.hpp"
#include "melle/griffin_lim.hpp"
#include "melle/losses.hpp"
#include "melle/mel.hpp"
#include "melle/model.hpp"
#include "melle/rng.hpp"
#include "melle/synth.hpp"
#include "melle/tape.hpp"
#include "melle/tensor.hpp"
#include "melle/tokenizer.hpp"
#include "melle/trainer.hpp"

namespace fs = std::filesystem;
using melle::RngState;
using melle::Tensor;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Fixture {
  std::string cli;  // operator binary under test
  fs::path dir;     // scratch space
  std::string transcript = "the quick toy utterance";
  std::string wav_path, manifest_path, ckpt_path;
  std::size_t gt_frames = 0;  // fixture utterance length in mel frames

  // Loaded once from the wav the CLI criteria also read.
  melle::text::Vocab vocab;
  Tensor<float> features;
};

// ~2 s toy utterance: a meandering harmonic tone with an amplitude contour,
// enough spectral structure to overfit against.
std::vector<float> fixture_wave() {
  const double sr = 16000.0, dur = 2.0;
  std::vector<float> x(static_cast<std::size_t>(sr * dur));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = 210.0 + 120.0 * std::sin(2.0 * std::numbers::pi * 0.9 * t) + 40.0 * t;
    const double env = std::min({t / 0.04, 1.0, (dur - t) / 0.04});
    double v = 0.45 * std::sin(2.0 * std::numbers::pi * f * t) +
               0.22 * std::sin(4.0 * std::numbers::pi * f * t) +
               0.11 * std::sin(6.0 * std::numbers::pi * f * t) +
               0.05 * std::sin(8.0 * std::numbers::pi * f * t);
    v *= env * (0.75 + 0.25 * std::sin(2.0 * std::numbers::pi * 2.3 * t));
    x[i] = static_cast<float>(v);
  }
  return x;
}

// Frozen overfit configuration (criterion 5); later criteria reuse its
// checkpoint through the CLI.
melle::ModelConfig fixture_model_config() {
  melle::ModelConfig mc;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_model = 64;
  mc.d_ffn = 128;
  mc.reduction = 2;
  mc.postnet_channels = 16;
  mc.postnet_kernel = 5;
  mc.postnet_blocks = 3;
  return mc;
}

melle::train::TrainConfig fixture_train_config() {
  melle::train::TrainConfig tc;
  tc.steps = 2000;
  tc.batch_frames = 400;
  tc.checkpoint_interval = 1000;
  tc.seed = 3;
  return tc;
}

int run_cli(const Fixture& fx, const std::string& args) {
  const std::string cmd = fx.cli + " " + args + " >> " + (fx.dir / "cli_log.txt").string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  if (st == -1) return -1;
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double mel_mad(const Tensor<float>& a, const Tensor<float>& b) {
  const std::size_t frames = std::min(a.rows(), b.rows());
  double acc = 0.0;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t m = 0; m < a.cols(); ++m)
      acc += std::abs(static_cast<double>(a.at(t, m)) - static_cast<double>(b.at(t, m)));
  return acc / static_cast<double>(frames * a.cols());
}

// ---- 1. mel protocol conformance ----

Outcome c1_mel_protocol(Fixture&) {
  const auto t0 = std::chrono::steady_clock::now();
  const melle::mel::MelParams p;
  if (p.sample_rate != 16000 || p.n_fft != 1024 || p.win_length != 1024 || p.hop != 256 ||
      p.n_mels != 80 || p.fmin != 80.0 || p.fmax != 7600.0)
    return {false, "protocol constants drifted"};

  std::vector<float> sig(160000);  // 10 s
  for (std::size_t i = 0; i < sig.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    sig[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * (200.0 + 300.0 * t) * t));
  }
  const Tensor<float> m = melle::mel::extract(sig, p);
  const double dt = seconds_since(t0);
  const double off = std::abs(static_cast<double>(m.rows()) - 625.0);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "1024-pt STFT/hop 256/80 mels@80-7600 Hz/16 kHz; 10 s -> %zu frames (62.5 fps off by %.0f <= 1), %.2f s < 1 s",
                m.rows(), off, dt);
  return {off <= 1.0 && m.cols() == 80 && dt < 1.0, buf};
}

// ---- 2. KL closed form vs Monte Carlo ----

Outcome c2_kl_oracle(Fixture&) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t instances = 100, samples = 100000, d = 80;

  auto one_instance = [&](std::size_t idx) -> double {
    RngState r = RngState(20250823).fork(idx);
    std::vector<double> mu(d), lv(d), y(d), sigma(d);
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = r.next_gaussian();
      mu[j] = y[j] + 0.3 + 0.9 * r.next_uniform();  // KL bounded away from 0
      lv[j] = 0.8 * r.next_gaussian();
      sigma[j] = std::exp(0.5 * lv[j]);
    }
    double closed = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = mu[j] - y[j];
      closed += std::exp(lv[j]) + delta * delta - 1.0 - lv[j];
    }
    closed *= 0.5;

    // z = mu + sigma*eps; E[log q(z) - log p(z)] with prior N(y, I):
    // 0.5 * sum((z - y)^2 - eps^2 - logvar).
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      double term = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double eps = r.next_gaussian();
        const double zy = mu[j] + sigma[j] * eps - y[j];
        term += zy * zy - eps * eps - lv[j];
      }
      acc += 0.5 * term;
    }
    const double mc = acc / static_cast<double>(samples);
    return std::abs(closed - mc) / std::abs(closed);
  };

  std::vector<double> rel(instances, 0.0);
  std::atomic<std::size_t> cursor{0};
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < hw; ++k)
    pool.emplace_back([&] {
      for (std::size_t i; (i = cursor.fetch_add(1)) < instances;) rel[i] = one_instance(i);
    });
  for (auto& th : pool) th.join();

  double worst = 0.0;
  for (double v : rel) worst = std::max(worst, v);
  const double dt = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "closed vs 1e5-sample MC, %zu instances at d=%zu: worst rel err %.4f%% <= 1%%, %.1f s < 30 s",
                instances, d, 100.0 * worst, dt);
  return {worst <= 0.01 && dt < 30.0, buf};
}

// ---- 3. gradient suite ----

Outcome c3_gradients(Fixture&) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = melle::gck::run_suite("all");
  bool ok = true;
  double worst_component = 0.0, worst_e2e = 0.0;
  for (const auto& r : results) {
    ok = ok && r.pass;
    if (r.component == "model")
      worst_e2e = std::max(worst_e2e, r.max_rel_err);
    else
      worst_component = std::max(worst_component, r.max_rel_err);
  }
  const double dt = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%zu scenarios: components max %.2e < 1e-6, end-to-end max %.2e < 1e-4, %.1f s < 120 s",
                results.size(), worst_component, worst_e2e, dt);
  return {ok && dt < 120.0, buf};
}

// ---- 4. loss identities ----

Outcome c4_loss_identities(Fixture&) {
  using melle::Tape;
  using melle::Var;
  double worst_identity = 0.0;

  {  // regression: y=0, y'=0.5, y''=-0.25 -> ((0.5+0.25)+(0.25+0.0625)) = 1.0625 per element
    Tape<double> t;
    const Var<double> y = t.constant(Tensor<double>::zeros({2, 2}));
    const Var<double> yp = t.constant(Tensor<double>({2, 2}, {0.5, 0.5, 0.5, 0.5}));
    const Var<double> ypp = t.constant(Tensor<double>({2, 2}, {-0.25, -0.25, -0.25, -0.25}));
    const double v = melle::loss::regression(y, yp, ypp).val().data[0];
    worst_identity = std::max(worst_identity, std::abs(v - 1.0625));
  }
  {  // flux: mu_t - y_{t-1} = 0.25 everywhere -> -(4*3*0.25)/15 = -0.2
    Tape<double> t;
    Tensor<double> y({5, 3}), mu({5, 3});
    RngState r(5);
    for (auto& v : y.data) v = r.next_gaussian();
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) mu.at(i, j) = y.at(i - 1, j) + 0.25;
    const double v = melle::loss::flux(t.constant(mu), t.constant(y)).val().data[0];
    worst_identity = std::max(worst_identity, std::abs(v - (-0.2)));
  }
  {  // stop: logits [0.5, 2], targets [0, 1] -> (softplus(0.5) + 100*softplus(-2))/2
    Tape<double> t;
    const Var<double> logits = t.constant(Tensor<double>({2}, {0.5, 2.0}));
    const double v = melle::loss::stop(logits, std::vector<double>{0.0, 1.0}).val().data[0];
    const double want = (std::log1p(std::exp(0.5)) + 100.0 * std::log1p(std::exp(-2.0))) / 2.0;
    worst_identity = std::max(worst_identity, std::abs(v - want));
  }

  // flux == 0 iff mu_t == y_{t-1} for every t >= 1.
  bool iff_ok = true;
  RngState r(6);
  Tensor<double> y({6, 4});
  for (auto& v : y.data) v = r.next_gaussian();
  Tensor<double> mu = Tensor<double>::zeros({6, 4});
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) mu.at(i, j) = y.at(i - 1, j);
  {
    Tape<double> t;
    iff_ok = iff_ok && melle::loss::flux(t.constant(mu), t.constant(y)).val().data[0] == 0.0;
  }
  for (int k = 0; k < 300; ++k) {  // any single mismatch breaks exactness
    Tensor<double> mu2 = mu;
    const std::size_t i = 1 + r.next_u64() % 5, j = r.next_u64() % 4;
    mu2.at(i, j) += (r.next_uniform() < 0.5 ? -1.0 : 1.0) * (0.01 + r.next_uniform());
    Tape<double> t;
    iff_ok = iff_ok && melle::loss::flux(t.constant(mu2), t.constant(y)).val().data[0] < 0.0;
  }

  // closed-form KL is nonnegative on 1000 random instances.
  bool kl_ok = true;
  double kl_min = 1e300;
  for (int k = 0; k < 1000; ++k) {
    Tape<double> t;
    Tensor<double> mu_t({2, 40}), lv({2, 40}), yy({2, 40});
    for (auto& v : mu_t.data) v = r.next_gaussian();
    for (auto& v : lv.data) v = r.next_gaussian();
    for (auto& v : yy.data) v = r.next_gaussian();
    const double v =
        melle::loss::kl(t.constant(mu_t), t.constant(lv), t.constant(yy)).val().data[0];
    kl_min = std::min(kl_min, v);
    kl_ok = kl_ok && v >= 0.0;
  }

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "analytic units off by %.1e <= 1e-9; flux zero-iff over 300 perturbations %s; min KL %.3f >= 0 over 1000",
                worst_identity, iff_ok ? "holds" : "BROKEN", kl_min);
  return {worst_identity <= 1e-9 && iff_ok && kl_ok, buf};
}

// ---- 5. overfit fixture ----

Outcome c5_overfit(Fixture& fx) {
  const auto t0 = std::chrono::steady_clock::now();
  melle::ModelConfig mc = fixture_model_config();
  mc.vocab_size = fx.vocab.size();
  melle::train::Trainer<float> tr =
      melle::train::Trainer<float>::create(mc, fixture_train_config());

  const std::vector<melle::train::TrainItem<float>> items{
      {fx.vocab.encode(fx.transcript), fx.features}};
  std::ostringstream metrics;
  melle::train::RunHooks<float> hooks;
  hooks.metrics = &metrics;
  const melle::train::StepStats last = melle::train::run_training(tr, items, hooks);

  // The later CLI criteria prompt against this trained model.
  fx.ckpt_path = (fx.dir / "overfit.bin").string();
  melle::train::save_checkpoint(fx.ckpt_path, tr, fx.vocab);

  double reg10 = -1.0;
  std::string line;
  std::istringstream in(metrics.str());
  while (std::getline(in, line)) {
    std::size_t step;
    double reg;
    if (std::sscanf(line.c_str(), "%zu\t%lf", &step, &reg) == 2 && step == 10) reg10 = reg;
  }
  const double ratio = reg10 > 0 ? reg10 / last.reg : 0.0;

  // Mean-mode continuation from a 16-frame slice of the ground truth.
  melle::synth::SynthesisRequest req;
  req.mode = melle::synth::Mode::continuation;
  req.sampling = melle::LatentMode::mean;
  req.target_tokens = items[0].tokens;
  req.prompt_mel = fx.features;
  req.prompt_frames = 16;
  req.max_frames = 2 * fx.gt_frames;
  req.seed = 1;
  const melle::synth::SynthesisResult res = melle::synth::generate(req, tr.model);
  const std::size_t total = req.prompt_frames + res.frame_count;
  const double dev = std::abs(static_cast<double>(total) - static_cast<double>(fx.gt_frames)) /
                     static_cast<double>(fx.gt_frames);
  const double dt = seconds_since(t0);

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "reg %.3f@10 -> %.3f@2000 (%.1fx >= 10x); mean-mode frames 16+%zu vs GT %zu (off %.1f%% <= 20%%), stop@%zu pre-max, %.0f s < 900 s",
                reg10, last.reg, ratio, res.frame_count, fx.gt_frames, 100.0 * dev,
                res.stop_step, dt);
  return {ratio >= 10.0 && dev <= 0.20 && !res.truncated && res.stop_step > 0 && dt < 900.0,
          buf};
}

// ---- 6. reduction factor ----

Outcome c6_reduction(Fixture&) {
  // Group-count law on awkward lengths.
  bool counts_ok = true;
  RngState r(77);
  for (const std::size_t t : {5u, 12u, 13u, 126u})
    for (const std::size_t red : {1u, 2u, 4u}) {
      const Tensor<float> mel = Tensor<float>::gaussian(r, {t, 80});
      const std::size_t want = (t + red - 1) / red;
      counts_ok =
          counts_ok && melle::train::partition_reduction(mel, red).rows() == want;
    }

  // r=1 grouping is the identity, bit for bit, through both directions and
  // through the teacher-forcing shift.
  const Tensor<float> mel = Tensor<float>::gaussian(r, {12, 80});
  const Tensor<float> grouped = melle::train::partition_reduction(mel, 1);
  bool identity_ok = grouped.data == mel.data && grouped.rows() == 12;
  identity_ok = identity_ok && melle::train::ungroup(grouped, 80).data == mel.data;

  melle::ModelConfig mc1;
  mc1.n_layers = 1;
  mc1.n_heads = 2;
  mc1.d_model = 32;
  mc1.d_ffn = 64;
  mc1.reduction = 1;
  mc1.vocab_size = 8;
  mc1.postnet_channels = 8;
  mc1.postnet_kernel = 3;
  mc1.postnet_blocks = 2;
  const melle::Model<float> m1 = melle::Model<float>::init(mc1, 99);
  const Tensor<float> shifted = m1.teacher_inputs(mel);
  Tensor<float> manual = Tensor<float>::zeros({12, 80});
  for (std::size_t i = 1; i < 12; ++i)
    for (std::size_t j = 0; j < 80; ++j) manual.at(i, j) = mel.at(i - 1, j);
  identity_ok = identity_ok && shifted.data == manual.data;

  // Decode-step law: a never-stopping model forced to T frames takes T/r
  // iterations; r=4 takes exactly a quarter of r=1's.
  const std::size_t T = 24;
  std::vector<std::size_t> iters;
  for (const std::size_t red : {1u, 2u, 4u}) {
    melle::ModelConfig mc = mc1;
    mc.reduction = red;
    melle::Model<float> m = melle::Model<float>::init(mc, 99);
    m.params["stop.w"] = Tensor<float>::zeros({mc.d_model, 1});
    m.params["stop.b"] = Tensor<float>({1}, {-10.0f});
    melle::synth::SynthesisRequest req;
    req.mode = melle::synth::Mode::continuation;
    req.target_tokens = {4, 6, 1};
    req.prompt_mel = Tensor<float>::gaussian(r, {8, 80});
    req.prompt_frames = 4;
    req.max_frames = T;
    req.seed = 9;
    const melle::synth::SynthesisResult res = melle::synth::generate(req, m);
    iters.push_back(res.stop_probs.size());
  }
  const bool decode_ok = iters[0] == T && iters[1] == T / 2 && iters[2] == T / 4 &&
                         iters[2] * 4 == iters[0];

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "ceil(T/r) groups on {5,12,13,126}x{1,2,4}; r=1 identity bit-exact; decode steps %zu/%zu/%zu for r=1/2/4 at T=%zu",
                iters[0], iters[1], iters[2], T);
  return {counts_ok && identity_ok && decode_ok, buf};
}

// ---- 7. synth determinism & diversity (through the CLI) ----

Outcome c7_determinism(Fixture& fx) {
  const std::string base = "synth --checkpoint " + fx.ckpt_path + " --prompt-wav " + fx.wav_path +
                           " --target-text '" + fx.transcript +
                           "' --mode cont --sampling sample --synth.prompt_frames 16"
                           " --synth.max_frames 252 --out ";
  const std::string a = (fx.dir / "det_a.wav").string();
  const std::string b = (fx.dir / "det_b.wav").string();
  const std::string c = (fx.dir / "det_c.wav").string();
  if (run_cli(fx, base + a + " --seed 101") != 0) return {false, "first synth run failed"};
  if (run_cli(fx, base + b + " --seed 101") != 0) return {false, "second synth run failed"};
  if (run_cli(fx, base + c + " --seed 102") != 0) return {false, "third synth run failed"};

  const std::string bytes_a = read_bytes(a), bytes_b = read_bytes(b);
  const bool identical = !bytes_a.empty() && bytes_a == bytes_b;

  const Tensor<float> mel_a = melle::mel::read_melf(a + ".melf");
  const Tensor<float> mel_c = melle::mel::read_melf(c + ".melf");
  double l1 = 0.0;
  const std::size_t n = std::min(mel_a.numel(), mel_c.numel());
  for (std::size_t i = 0; i < n; ++i)
    l1 += std::abs(static_cast<double>(mel_a.data[i]) - static_cast<double>(mel_c.data[i]));
  const bool diverse = mel_a.rows() != mel_c.rows() || l1 > 0.0;

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "seed 101 twice -> identical wav bytes (%zu); seeds 101 vs 102 -> mel L1 %.3f > 0",
                bytes_a.size(), l1);
  return {identical && diverse, buf};
}

// ---- 8. ablation harness (through the CLI) ----

Outcome c8_ablation(Fixture& fx) {
  const fs::path abl = fx.dir / "ablate";
  const std::string cmd =
      "ablate --manifest " + fx.manifest_path + " --out-dir " + abl.string() +
      " --model.n_layers 2 --model.n_heads 2 --model.d_model 64 --model.d_ffn 128"
      " --model.reduction 2 --model.postnet_channels 16 --model.postnet_kernel 5"
      " --model.postnet_blocks 3 --train.steps 120 --train.warmup_steps 20"
      " --train.lambda_breakpoint 30 --train.batch_frames 400 --train.seed 3";
  const int rc = run_cli(fx, cmd);
  if (rc != 0) return {false, "ablate exited " + std::to_string(rc)};

  std::ifstream f(abl / "ablation.tsv");
  if (!f) return {false, "ablation.tsv missing"};
  std::string line;
  std::getline(f, line);  // header
  std::size_t rows = 0;
  bool finite = true;
  std::string names;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string name;
    double reg, kl, flux, stop, total;
    ls >> name >> reg >> kl >> flux >> stop >> total;
    if (!ls) return {false, "unparseable ablation row: " + line};
    finite = finite && std::isfinite(reg) && std::isfinite(kl) && std::isfinite(flux) &&
             std::isfinite(stop) && std::isfinite(total);
    names += (rows ? "," : "") + name;
    ++rows;
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%zu variants (%s) trained to finite losses, table emitted",
                rows, names.c_str());
  return {rows == 4 && finite, buf};
}

// ---- 9. round trips ----

Outcome c9_round_trips(Fixture& fx) {
  // Checkpoint: save -> load -> re-save byte-identical; training continuation
  // from the restored state is bit-exact.
  melle::ModelConfig mc;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_model = 32;
  mc.d_ffn = 64;
  mc.reduction = 2;
  mc.vocab_size = fx.vocab.size();
  mc.postnet_channels = 8;
  mc.postnet_kernel = 3;
  mc.postnet_blocks = 2;
  melle::train::TrainConfig tc;
  tc.steps = 9;
  tc.warmup_steps = 2;
  tc.lambda_breakpoint = 3;
  tc.batch_frames = 200;
  tc.checkpoint_interval = 3;
  tc.seed = 21;

  const std::vector<melle::train::TrainItem<float>> items{
      {fx.vocab.encode(fx.transcript), fx.features}};
  melle::train::Trainer<float> full = melle::train::Trainer<float>::create(mc, tc);
  std::string blob_at_6;
  melle::train::RunHooks<float> hooks;
  hooks.on_checkpoint = [&](const melle::train::Trainer<float>& t) {
    if (t.step == 6) blob_at_6 = melle::train::serialize_checkpoint(t, fx.vocab);
  };
  melle::train::run_training(full, items, hooks);

  const std::string ck = (fx.dir / "rt.bin").string();
  {
    std::ofstream f(ck, std::ios::binary);
    f << blob_at_6;
  }
  melle::text::Vocab v2;
  melle::train::Trainer<float> resumed = melle::train::load_checkpoint<float>(ck, v2, &mc);
  const bool resave_identical = melle::train::serialize_checkpoint(resumed, v2) == blob_at_6;
  resumed.cfg = tc;
  resumed.opt.weight_decay = tc.weight_decay;
  melle::train::run_training(resumed, items);
  bool bitexact = resumed.step == full.step;
  for (const auto& [name, t] : full.model.params)
    bitexact = bitexact && t.data == resumed.model.params.at(name).data;

  // MELF: floats survive a write/read cycle untouched.
  RngState r(31);
  const Tensor<float> mel = Tensor<float>::gaussian(r, {37, 80});
  const std::string mp = (fx.dir / "rt.melf").string();
  melle::mel::write_melf(mp, mel);
  const Tensor<float> mel2 = melle::mel::read_melf(mp);
  const bool melf_ok = mel2.shape == mel.shape && mel2.data == mel.data;

  // Griffin-Lim round trip stays under the recorded bound (measured 0.3154 on
  // this sweep fixture at 60 iterations, frozen at x1.2).
  std::vector<float> tone(32000);
  for (std::size_t i = 0; i < tone.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    tone[i] = static_cast<float>(
        0.5 * std::sin(2.0 * std::numbers::pi * (200.0 * t + 950.0 * t * t)));
  }
  const melle::mel::MelParams p;
  const Tensor<float> logmel = melle::mel::extract(tone, p);
  const Tensor<float> again =
      melle::mel::extract(melle::gl::mel_to_audio(logmel, p, 60), p);
  const double mad = mel_mad(logmel, again);

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "checkpoint resume bit-exact, re-save byte-identical; MELF lossless; GL round-trip MAD %.3f < 0.379",
                mad);
  return {bitexact && resave_identical && melf_ok && mad < 0.379, buf};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: melle_accept <path to melle CLI> [scratch dir]\n");
    return 2;
  }
  Fixture fx;
  fx.cli = argv[1];
  fx.dir = argc > 2 ? fs::path(argv[2])
                    : fs::temp_directory_path() / "melle_accept";
  fs::remove_all(fx.dir);
  fs::create_directories(fx.dir);

  // Shared fixture: the toy utterance on disk (for the CLI) and its features
  // as the CLI would load them.
  fx.wav_path = (fx.dir / "utt.wav").string();
  melle::audio::write_wav(fx.wav_path, fixture_wave(), 16000);
  fx.manifest_path = (fx.dir / "manifest.tsv").string();
  {
    std::ofstream f(fx.manifest_path);
    f << fx.wav_path << "\t" << fx.transcript << "\n";
  }
  const melle::audio::Wave w = melle::audio::read_wav(fx.wav_path, 16000);
  fx.features = melle::mel::extract(w.samples, melle::mel::MelParams{});
  fx.gt_frames = fx.features.rows();
  fx.vocab = melle::text::Vocab::build({fx.transcript});

  struct Entry {
    const char* name;
    Outcome (*fn)(Fixture&);
  };
  const Entry criteria[] = {
      {"mel protocol conformance", c1_mel_protocol},
      {"KL closed form vs Monte Carlo", c2_kl_oracle},
      {"finite-difference gradient suite", c3_gradients},
      {"loss identities", c4_loss_identities},
      {"overfit fixture", c5_overfit},
      {"reduction factor laws", c6_reduction},
      {"synth determinism and diversity", c7_determinism},
      {"ablation harness", c8_ablation},
      {"round trips", c9_round_trips},
  };

  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    Outcome out;
    try {
      out = criteria[i].fn(fx);
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %zu. %s: %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].name,
                out.detail.c_str());
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  if (failures > 0) std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
