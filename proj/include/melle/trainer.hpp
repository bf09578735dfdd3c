#pragma once

// Teacher-forced training: reduction-factor partitioning, schedules, batch
// assembly with exact loss masking over padded regions, AdamW stepping, and
// a byte-stable checkpoint container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "melle/errors.hpp"
#include "melle/losses.hpp"
#include "melle/model.hpp"
#include "melle/optim.hpp"
#include "melle/rng.hpp"
#include "melle/tape.hpp"
#include "melle/tensor.hpp"
#include "melle/tokenizer.hpp"

namespace melle::train {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_frames = 2000;  // padded-frame budget per batch
  double peak_lr = 5e-4;
  std::size_t warmup_steps = 200;
  std::size_t lambda_breakpoint = 100;
  double lambda_value = 0.1;
  double beta = 0.5;
  double gamma = 1.0;
  double pos_weight = 100.0;
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  std::size_t checkpoint_interval = 500;
  std::uint64_t seed = 0;
  LatentMode mode = LatentMode::sample;

  void validate() const {
    if (steps == 0) throw std::invalid_argument("train config: steps must be positive");
    if (warmup_steps >= steps)
      throw std::invalid_argument("train config: warmup must be shorter than the run");
    if (batch_frames == 0) throw std::invalid_argument("train config: batch_frames must be positive");
    if (peak_lr <= 0.0) throw std::invalid_argument("train config: peak_lr must be positive");
    if (pos_weight <= 0.0) throw std::invalid_argument("train config: pos_weight must be positive");
    if (checkpoint_interval == 0)
      throw std::invalid_argument("train config: checkpoint_interval must be positive");
  }
};

// Linear ramp 0→peak over warmup, then linear decay peak→0 at the final step.
inline double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.steps) return 0.0;
  if (step <= cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * static_cast<double>(cfg.steps - step) /
         static_cast<double>(cfg.steps - cfg.warmup_steps);
}

// KL weight: off until the breakpoint, constant after.
inline double lambda_schedule(std::size_t step, const TrainConfig& cfg) {
  return step < cfg.lambda_breakpoint ? 0.0 : cfg.lambda_value;
}

// ---- reduction-factor grouping ----

template <typename T>
Tensor<T> pad_to_multiple(const Tensor<T>& mel, std::size_t r) {
  if (r < 1) throw std::invalid_argument("pad_to_multiple: r must be >= 1");
  if (mel.ndim() != 2) throw std::invalid_argument("pad_to_multiple: need T×n_mels");
  const std::size_t t = mel.rows(), d = mel.cols();
  const std::size_t t_pad = (t + r - 1) / r * r;
  if (t_pad == t) return mel;
  Tensor<T> out({t_pad, d});
  std::copy(mel.data.begin(), mel.data.end(), out.data.begin());
  return out;
}

// T×n_mels → ⌈T/r⌉×(r·n_mels), final group zero-padded.
template <typename T>
Tensor<T> partition_reduction(const Tensor<T>& mel, std::size_t r) {
  Tensor<T> padded = pad_to_multiple(mel, r);
  const std::size_t groups = padded.rows() / r;
  padded.shape = {groups, r * mel.cols()};
  return padded;
}

template <typename T>
Tensor<T> ungroup(const Tensor<T>& groups, std::size_t n_mels) {
  if (groups.ndim() != 2 || groups.cols() % n_mels != 0)
    throw std::invalid_argument("ungroup: group width must be a multiple of n_mels");
  Tensor<T> out = groups;
  out.shape = {groups.numel() / n_mels, n_mels};
  return out;
}

// ---- batches ----

template <typename T>
struct TrainItem {
  std::vector<std::size_t> tokens;  // EOS-terminated
  Tensor<T> mel;                    // real frames, T×n_mels
};

template <typename T>
struct TrainingBatch {
  struct Entry {
    std::vector<std::size_t> tokens;
    Tensor<T> mel_padded;  // right-padded to a multiple of r with zeros
    std::size_t real_frames = 0;
    std::vector<T> stop_targets;  // one per real group, single 1 at the end
  };
  std::vector<Entry> entries;

  std::size_t total_real_frames() const {
    std::size_t n = 0;
    for (const Entry& e : entries) n += e.real_frames;
    return n;
  }
};

template <typename T>
typename TrainingBatch<T>::Entry make_entry(const TrainItem<T>& item, std::size_t r) {
  if (item.tokens.empty()) throw std::invalid_argument("batch: item without tokens");
  if (item.mel.ndim() != 2 || item.mel.rows() == 0)
    throw std::invalid_argument("batch: item without frames");
  typename TrainingBatch<T>::Entry e;
  e.tokens = item.tokens;
  e.real_frames = item.mel.rows();
  e.mel_padded = pad_to_multiple(item.mel, r);
  const std::size_t m_real = (e.real_frames + r - 1) / r;
  e.stop_targets.assign(m_real, T(0));
  e.stop_targets[m_real - 1] = T(1);
  return e;
}

// Greedy length-sorted packing under a padded-frame budget; every batch gets
// at least one item even when it alone exceeds the budget.
inline std::vector<std::vector<std::size_t>> plan_batches(
    const std::vector<std::size_t>& padded_frames, std::size_t batch_frames) {
  std::vector<std::size_t> order(padded_frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return padded_frames[a] < padded_frames[b];
  });
  std::vector<std::vector<std::size_t>> plan;
  std::size_t used = 0;
  for (std::size_t id : order) {
    if (plan.empty() || used + padded_frames[id] > batch_frames) {
      plan.emplace_back();
      used = 0;
    }
    plan.back().push_back(id);
    used += padded_frames[id];
  }
  return plan;
}

template <typename V>
void seeded_shuffle(std::vector<V>& v, RngState rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(v[i - 1], v[j]);
  }
}

// ---- per-item objective with exact padding masks ----

template <typename T>
struct ItemLoss {
  Var<T> reg, kl, flux, stop, total;
};

template <typename T>
ItemLoss<T> item_loss(const Model<T>& model, typename Model<T>::Ctx& c,
                      const typename TrainingBatch<T>::Entry& e, const loss::Weights<T>& w,
                      LatentMode mode, T pos_weight) {
  const auto out = model.forward_teacher_forced(c, e.tokens, e.mel_padded, mode, e.real_frames);
  const std::size_t t_pad = e.mel_padded.rows();
  const Var<T> y_pad = c.tape->constant(e.mel_padded);
  const Var<T> y = e.real_frames == t_pad ? y_pad : row_slice(y_pad, 0, e.real_frames);

  // μ/logσ² are group-shaped; masking is frame-granular, so compare after
  // ungrouping and dropping the pad rows.
  Var<T> mu_f = reshape(out.latents.mu, {t_pad, model.cfg.n_mels});
  Var<T> lv_f = reshape(out.latents.logvar, {t_pad, model.cfg.n_mels});
  if (e.real_frames != t_pad) {
    mu_f = row_slice(mu_f, 0, e.real_frames);
    lv_f = row_slice(lv_f, 0, e.real_frames);
  }
  const std::size_t m_real = e.stop_targets.size();
  const Var<T> logits = m_real == out.stop_logits.rows()
                            ? out.stop_logits
                            : row_slice(out.stop_logits, 0, m_real);

  ItemLoss<T> L;
  L.reg = loss::regression(y, out.y_prime, out.y_dprime);
  L.kl = loss::kl(mu_f, lv_f, y);
  L.flux = loss::flux(mu_f, y);
  L.stop = loss::stop(logits, e.stop_targets, pos_weight);
  L.total = loss::combine(L.reg, L.kl, L.flux, L.stop, w);
  return L;
}

// ---- the loop ----

struct StepStats {
  std::size_t step = 0;
  double reg = 0, kl = 0, flux = 0, stop = 0, total = 0;
  double lr = 0, lambda = 0, grad_norm = 0;
};

template <typename T>
struct Trainer {
  Model<T> model;
  AdamW<T> opt;
  TrainConfig cfg;
  std::size_t step = 0;

  static Trainer create(const ModelConfig& mc, const TrainConfig& tc) {
    tc.validate();
    Trainer tr;
    tr.model = Model<T>::init(mc, tc.seed);
    tr.cfg = tc;
    tr.opt.weight_decay = tc.weight_decay;
    return tr;
  }

  // One optimizer update over a batch: per-item forward/backward with frame-
  // share weighting, global-norm clipping, AdamW. Deterministic in
  // (cfg.seed, step).
  StepStats train_step(const TrainingBatch<T>& batch) {
    if (batch.entries.empty()) throw std::invalid_argument("train_step: empty batch");
    StepStats s;
    s.step = step;
    s.lr = lr_schedule(step, cfg);
    s.lambda = lambda_schedule(step, cfg);
    loss::Weights<T> w;
    w.lambda = static_cast<T>(s.lambda);
    w.beta = static_cast<T>(cfg.beta);
    w.gamma = static_cast<T>(cfg.gamma);

    const double total_frames = static_cast<double>(batch.total_real_frames());
    std::map<std::string, Tensor<T>> grads;
    const RngState step_rng = RngState(cfg.seed).fork(step);
    for (std::size_t i = 0; i < batch.entries.size(); ++i) {
      const auto& e = batch.entries[i];
      Tape<T> tape;
      auto c = model.ctx(tape, step_rng.fork(i), true);
      const ItemLoss<T> L =
          item_loss(model, c, e, w, cfg.mode, static_cast<T>(cfg.pos_weight));
      const double wi = static_cast<double>(e.real_frames) / total_frames;
      s.reg += wi * static_cast<double>(L.reg.val().data[0]);
      s.kl += wi * static_cast<double>(L.kl.val().data[0]);
      s.flux += wi * static_cast<double>(L.flux.val().data[0]);
      s.stop += wi * static_cast<double>(L.stop.val().data[0]);
      const double item_total = static_cast<double>(L.total.val().data[0]);
      s.total += wi * item_total;
      if (!std::isfinite(item_total))
        throw NumericError("train_step: non-finite loss at step " + std::to_string(step) +
                                 ", batch item " + std::to_string(i) +
                                 " (reg=" + std::to_string(L.reg.val().data[0]) +
                                 " kl=" + std::to_string(L.kl.val().data[0]) +
                                 " flux=" + std::to_string(L.flux.val().data[0]) +
                                 " stop=" + std::to_string(L.stop.val().data[0]) + ")");

      tape.backward(mul_scalar(L.total, static_cast<T>(wi)));
      for (const auto& [name, var] : c.leaves) {
        const auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, tape.grad(var));
        } else {
          const Tensor<T> g = tape.grad(var);
          kern::add(it->second.data.data(), g.data.data(), it->second.data.data(), g.numel());
        }
      }
    }

    s.grad_norm = global_grad_norm(grads);
    if (!std::isfinite(s.grad_norm))
      throw NumericError("train_step: non-finite gradient at step " + std::to_string(step));
    clip_grad_norm(grads, cfg.grad_clip);
    auto params = model.named_params();
    opt.step(params, grads, s.lr);
    ++step;
    return s;
  }
};

inline void write_metrics_line(std::ostream& os, const StepStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\n", s.step, s.reg,
                s.kl, s.flux, s.stop, s.total, s.lr, s.lambda);
  os << buf;
}

template <typename T>
struct RunHooks {
  std::ostream* metrics = nullptr;
  std::function<void(const Trainer<T>&)> on_checkpoint;  // interval + final step
};

// Runs (or resumes) the loop to cfg.steps. Batch composition is fixed by the
// length-sorted plan; batch order reshuffles per epoch from the seed.
template <typename T>
StepStats run_training(Trainer<T>& tr, const std::vector<TrainItem<T>>& items,
                       const RunHooks<T>& hooks = {}) {
  tr.cfg.validate();
  if (items.empty()) throw std::invalid_argument("run_training: no items");
  const std::size_t r = tr.model.cfg.reduction;

  std::vector<typename TrainingBatch<T>::Entry> entries;
  std::vector<std::size_t> padded_frames;
  entries.reserve(items.size());
  for (const auto& item : items) {
    entries.push_back(make_entry(item, r));
    padded_frames.push_back(entries.back().mel_padded.rows());
  }
  const auto plan = plan_batches(padded_frames, tr.cfg.batch_frames);
  const std::size_t nb = plan.size();

  constexpr std::uint64_t kShuffleTag = 0x5u;
  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  StepStats last;
  while (tr.step < tr.cfg.steps) {
    const std::size_t epoch = tr.step / nb;
    if (epoch != order_epoch) {
      order.resize(nb);
      std::iota(order.begin(), order.end(), 0);
      seeded_shuffle(order, RngState(tr.cfg.seed).fork(kShuffleTag).fork(epoch));
      order_epoch = epoch;
    }
    TrainingBatch<T> batch;
    for (std::size_t id : plan[order[tr.step % nb]]) batch.entries.push_back(entries[id]);
    last = tr.train_step(batch);
    if (hooks.metrics) write_metrics_line(*hooks.metrics, last);
    if (hooks.on_checkpoint &&
        (tr.step % tr.cfg.checkpoint_interval == 0 || tr.step == tr.cfg.steps))
      hooks.on_checkpoint(tr);
  }
  return last;
}

// ---- checkpoints ----
//
// Layout: "MCKP", u32 version, u64 json length + json (model config + vocab,
// sorted keys), u64 step, u64 adam_t, u32 param count, then per parameter in
// name order: name, dims, f32 values, f32 adam-m, f32 adam-v. Fixed field
// widths and sorted traversal make re-saves byte-identical.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
template <typename T>
void put_f32_blob(std::string& out, const Tensor<T>& t) {
  for (T v : t.data) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

struct CkptReader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit CkptReader(const std::string& b) : buf(b) {}

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  template <typename T>
  void f32_into(Tensor<T>& t) {
    for (T& v : t.data) {
      const std::uint32_t bits = u32();
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<T>(f);
    }
  }
};

inline nlohmann::json config_json(const ModelConfig& c) {
  return nlohmann::json{{"n_layers", c.n_layers},
                        {"n_heads", c.n_heads},
                        {"d_model", c.d_model},
                        {"d_ffn", c.d_ffn},
                        {"dropout", c.dropout},
                        {"n_mels", c.n_mels},
                        {"reduction", c.reduction},
                        {"max_frames", c.max_frames},
                        {"max_positions", c.max_positions},
                        {"vocab_size", c.vocab_size},
                        {"postnet_channels", c.postnet_channels},
                        {"postnet_kernel", c.postnet_kernel},
                        {"postnet_blocks", c.postnet_blocks},
                        {"prenet_dropout", c.prenet_dropout},
                        {"logvar_min", c.logvar_min},
                        {"logvar_max", c.logvar_max}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ffn = j.at("d_ffn").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.n_mels = j.at("n_mels").get<std::size_t>();
  c.reduction = j.at("reduction").get<std::size_t>();
  c.max_frames = j.at("max_frames").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.postnet_channels = j.at("postnet_channels").get<std::size_t>();
  c.postnet_kernel = j.at("postnet_kernel").get<std::size_t>();
  c.postnet_blocks = j.at("postnet_blocks").get<std::size_t>();
  c.prenet_dropout = j.at("prenet_dropout").get<double>();
  c.logvar_min = j.at("logvar_min").get<double>();
  c.logvar_max = j.at("logvar_max").get<double>();
  return c;
}

}  // namespace detail

inline constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
std::string serialize_checkpoint(const Trainer<T>& tr, const text::Vocab& vocab) {
  nlohmann::json meta;
  meta["model"] = detail::config_json(tr.model.cfg);
  meta["vocab"] = text::encode_utf8(vocab.symbols());
  const std::string meta_s = meta.dump();

  std::string out = "MCKP";
  detail::put_u32(out, kCkptVersion);
  detail::put_u64(out, meta_s.size());
  out += meta_s;
  detail::put_u64(out, tr.step);
  detail::put_u64(out, tr.opt.t);
  detail::put_u32(out, static_cast<std::uint32_t>(tr.model.params.size()));
  for (const auto& [name, p] : tr.model.params) {  // std::map: sorted names
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t d : p.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_f32_blob(out, p);
    const auto mit = tr.opt.m.find(name);
    const auto vit = tr.opt.v.find(name);
    // Untouched optimizer state serializes as the zeros it implicitly is.
    if (mit == tr.opt.m.end()) {
      detail::put_f32_blob(out, Tensor<T>::zeros(p.shape));
      detail::put_f32_blob(out, Tensor<T>::zeros(p.shape));
    } else {
      detail::put_f32_blob(out, mit->second);
      detail::put_f32_blob(out, vit->second);
    }
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const Trainer<T>& tr, const text::Vocab& vocab) {
  const std::string blob = serialize_checkpoint(tr, vocab);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

// expect, when given, must match the stored model config exactly (resume
// safety); the returned trainer still needs its TrainConfig assigned.
template <typename T>
Trainer<T> load_checkpoint(const std::string& path, text::Vocab& vocab_out,
                           const ModelConfig* expect = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  detail::CkptReader rd(buf);
  if (rd.bytes(4) != "MCKP") throw std::runtime_error("checkpoint: bad magic");
  if (rd.u32() != kCkptVersion) throw std::runtime_error("checkpoint: unsupported version");
  const auto meta_len = static_cast<std::size_t>(rd.u64());
  const nlohmann::json meta = nlohmann::json::parse(rd.bytes(meta_len));
  const ModelConfig cfg = detail::config_from_json(meta.at("model"));
  cfg.validate();
  if (expect != nullptr) {
    if (detail::config_json(*expect) != detail::config_json(cfg))
      throw std::runtime_error("checkpoint: model config mismatch");
  }
  vocab_out = text::Vocab::from_symbols(text::decode_utf8(meta.at("vocab").get<std::string>()));

  Trainer<T> tr;
  tr.model = Model<T>::init(cfg, 0);  // shapes only; every blob is overwritten
  tr.step = rd.u64();
  tr.opt.t = rd.u64();
  const std::uint32_t n = rd.u32();
  if (n != tr.model.params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t name_len = rd.u32();
    const std::string name = rd.bytes(name_len);
    const auto it = tr.model.params.find(name);
    if (it == tr.model.params.end())
      throw std::runtime_error("checkpoint: unknown parameter " + name);
    const std::uint32_t ndim = rd.u32();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = rd.u32();
    if (shape != it->second.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    rd.f32_into(it->second);
    Tensor<T> m = Tensor<T>::zeros(shape), v = Tensor<T>::zeros(shape);
    rd.f32_into(m);
    rd.f32_into(v);
    tr.opt.m.emplace(name, std::move(m));
    tr.opt.v.emplace(name, std::move(v));
  }
  if (rd.pos != buf.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return tr;
}

// ---- manifests ----

struct ManifestEntry {
  std::string path;
  std::string transcript;
};

// One utterance per line: "<wav-or-melf path>\t<transcript>". Blank lines
// are skipped.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": expected <path>\\t<transcript>");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

}  // namespace melle::train
