#pragma once

// Decoder-only acoustic language model: token embeddings and pre-netted mel
// groups share one causally masked Transformer; per-step heads produce a
// latent Gaussian (sampled or collapsed to its mean), stop logits, and a
// convolutional post-net refines the assembled spectrogram.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "melle/rng.hpp"
#include "melle/tape.hpp"
#include "melle/tensor.hpp"

namespace melle {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ffn = 512;
  double dropout = 0.1;
  std::size_t n_mels = 80;
  std::size_t reduction = 1;  // frames emitted per decoding step
  std::size_t max_frames = 2048;
  std::size_t max_positions = 4096;
  std::size_t vocab_size = 0;
  std::size_t postnet_channels = 256;
  std::size_t postnet_kernel = 5;
  std::size_t postnet_blocks = 5;
  double prenet_dropout = 0.5;
  double logvar_min = -12.0;
  double logvar_max = 6.0;

  std::size_t group_dim() const { return reduction * n_mels; }

  void validate() const {
    if (n_mels != 80) throw std::invalid_argument("config: n_mels must be 80");
    if (reduction < 1) throw std::invalid_argument("config: reduction must be >= 1");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw std::invalid_argument("config: d_model must divide evenly into heads");
    if (vocab_size < 4) throw std::invalid_argument("config: vocab too small");
    if (postnet_kernel % 2 == 0) throw std::invalid_argument("config: postnet kernel must be odd");
    if (n_layers == 0 || d_ffn == 0 || postnet_blocks == 0)
      throw std::invalid_argument("config: zero-sized submodule");
  }
};

enum class LatentMode { sample, mean };

template <typename T>
struct LatentStats {
  Var<T> mu, logvar, z;  // each M×(r·n_mels)
};

template <typename T>
struct ModelOutputs {
  Var<T> y_prime;   // real_frames×n_mels, pre post-net
  Var<T> y_dprime;  // real_frames×n_mels, post-net refined
  Var<T> stop_logits;  // M×1
  LatentStats<T> latents;
  Var<T> e;  // M×d_model decoder states at acoustic positions
};

template <typename T>
class Model {
 public:
  ModelConfig cfg;
  std::map<std::string, Tensor<T>> params;

  // Per-forward state: the tape, one leaf per touched parameter, and the
  // rng all dropout masks and latent noise fork from.
  struct Ctx {
    Tape<T>* tape = nullptr;
    bool train = false;
    RngState rng{0};
    std::map<std::string, Var<T>> leaves;
  };

  Ctx ctx(Tape<T>& tape, RngState rng, bool train) const {
    Ctx c;
    c.tape = &tape;
    c.train = train;
    c.rng = rng;
    return c;
  }

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    const std::size_t d = cfg.d_model, gd = cfg.group_dim();
    m.add_param(seed, "text_emb", {cfg.vocab_size, d}, T(0.1));
    m.add_xavier(seed, "prenet.w1", gd, d);
    m.add_zeros("prenet.b1", {d});
    m.add_xavier(seed, "prenet.w2", d, d);
    m.add_zeros("prenet.b2", {d});
    m.add_xavier(seed, "prenet.w3", d, d);
    m.add_zeros("prenet.b3", {d});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      m.add_ones(p + "ln1.g", {d});
      m.add_zeros(p + "ln1.b", {d});
      for (const char* w : {"wq", "wk", "wv", "wo"}) m.add_xavier(seed, p + w, d, d);
      for (const char* b : {"bq", "bk", "bv", "bo"}) m.add_zeros(p + b, {d});
      m.add_ones(p + "ln2.g", {d});
      m.add_zeros(p + "ln2.b", {d});
      m.add_xavier(seed, p + "ff.w1", d, cfg.d_ffn);
      m.add_zeros(p + "ff.b1", {cfg.d_ffn});
      m.add_xavier(seed, p + "ff.w2", cfg.d_ffn, d);
      m.add_zeros(p + "ff.b2", {d});
    }
    m.add_ones("ln_f.g", {d});
    m.add_zeros("ln_f.b", {d});
    m.add_xavier(seed, "latent.w", d, 2 * gd);
    m.add_zeros("latent.b", {2 * gd});
    m.add_xavier(seed, "latmlp.w1", gd, d);
    m.add_zeros("latmlp.b1", {d});
    m.add_xavier(seed, "latmlp.w2", d, d);
    m.add_zeros("latmlp.b2", {d});
    // Zero last layers of the residual stacks so both refinements start as
    // identities.
    m.add_zeros("latmlp.w3", {d, gd});
    m.add_zeros("latmlp.b3", {gd});
    m.add_xavier(seed, "stop.w", d, 1);
    m.add_zeros("stop.b", {1});
    const std::size_t k = cfg.postnet_kernel;
    for (std::size_t b = 0; b < cfg.postnet_blocks; ++b) {
      const std::size_t cin = b == 0 ? cfg.n_mels : cfg.postnet_channels;
      const std::size_t cout = b + 1 == cfg.postnet_blocks ? cfg.n_mels : cfg.postnet_channels;
      const std::string name = "post." + std::to_string(b) + ".";
      if (b + 1 == cfg.postnet_blocks)
        m.add_zeros(name + "w", {cout, cin * k});
      else
        m.add_xavier(seed, name + "w", cin * k, cout, {cout, cin * k});
      m.add_zeros(name + "b", {cout});
    }
    return m;
  }

  Var<T> param(Ctx& c, const std::string& name) const {
    const auto it = c.leaves.find(name);
    if (it != c.leaves.end()) return it->second;
    const auto pit = params.find(name);
    if (pit == params.end()) throw std::logic_error("unknown parameter: " + name);
    const Var<T> v = c.tape->leaf(pit->second, c.train);
    c.leaves.emplace(name, v);
    return v;
  }

  Var<T> linear(Ctx& c, Var<T> x, const std::string& prefix_w, const std::string& prefix_b) const {
    return add_bias(matmul(x, param(c, prefix_w)), param(c, prefix_b));
  }

  // Sinusoidal absolute positions, rows×d.
  static Tensor<T> positional(std::size_t rows, std::size_t d) {
    Tensor<T> pe({rows, d});
    for (std::size_t pos = 0; pos < rows; ++pos)
      for (std::size_t i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        pe.at(pos, i) = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
        if (i + 1 < d) pe.at(pos, i + 1) = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
      }
    return pe;
  }

  // Three relu layers, dropout after each; the masks are drawn even in eval
  // mode — by model design the pre-net stays stochastic at inference.
  Var<T> prenet(Ctx& c, Var<T> groups) const {
    Var<T> h = groups;
    for (int i = 1; i <= 3; ++i) {
      const std::string n = std::to_string(i);
      h = relu(linear(c, h, "prenet.w" + n, "prenet.b" + n));
      h = dropout(c, h, cfg.prenet_dropout, kSitePrenet + static_cast<std::uint64_t>(i),
                  /*always=*/true);
    }
    return h;
  }

  // Causal self-attention over [text; acoustic]; returns the acoustic rows.
  Var<T> decode(Ctx& c, Var<T> text_emb, Var<T> mel_emb) const {
    const std::size_t l_text = text_emb.rows(), m_ac = mel_emb.rows();
    const std::size_t s = l_text + m_ac;
    if (l_text == 0 || m_ac == 0) throw std::invalid_argument("decode: empty segment");
    if (s > cfg.max_positions) throw std::invalid_argument("decode: sequence too long");

    Var<T> x = row_concat(text_emb, mel_emb);
    x = add(x, c.tape->constant(positional(s, cfg.d_model)));
    x = dropout(c, x, cfg.dropout, kSiteInput);

    Tensor<T> mask({s, s});
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = i + 1; j < s; ++j) mask.at(i, j) = T(-1e9);
    const Var<T> maskv = c.tape->constant(std::move(mask));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      Var<T> h = layernorm_rows(x, param(c, p + "ln1.g"), param(c, p + "ln1.b"));
      x = add(x, attention(c, h, p, maskv, l));
      h = layernorm_rows(x, param(c, p + "ln2.g"), param(c, p + "ln2.b"));
      Var<T> f = gelu(linear(c, h, p + "ff.w1", p + "ff.b1"));
      f = linear(c, f, p + "ff.w2", p + "ff.b2");
      x = add(x, dropout(c, f, cfg.dropout, kSiteFfn + l));
    }
    x = layernorm_rows(x, param(c, "ln_f.g"), param(c, "ln_f.b"));
    return row_slice(x, l_text, s);
  }

  LatentStats<T> latent_sample(Ctx& c, Var<T> e, LatentMode mode) const {
    const std::size_t gd = cfg.group_dim();
    const Var<T> h = linear(c, e, "latent.w", "latent.b");
    LatentStats<T> out;
    out.mu = col_slice(h, 0, gd);
    out.logvar = clamp(col_slice(h, gd, 2 * gd), static_cast<T>(cfg.logvar_min),
                       static_cast<T>(cfg.logvar_max));
    if (mode == LatentMode::sample) {
      RngState r = c.rng.fork(kSiteLatentEps);
      const Var<T> eps = c.tape->constant(Tensor<T>::gaussian(r, out.mu.val().shape));
      out.z = add(out.mu, mul(exp_op(mul_scalar(out.logvar, T(0.5))), eps));
    } else {
      out.z = out.mu;
    }
    return out;
  }

  // y' = z + mlp(z), ungrouped to frames.
  Var<T> latent_to_frames(Ctx& c, Var<T> z) const {
    Var<T> h = relu(linear(c, z, "latmlp.w1", "latmlp.b1"));
    h = relu(linear(c, h, "latmlp.w2", "latmlp.b2"));
    h = linear(c, h, "latmlp.w3", "latmlp.b3");
    Var<T> groups = add(z, h);
    return reshape(groups, {groups.rows() * cfg.reduction, cfg.n_mels});
  }

  Var<T> stop_logits(Ctx& c, Var<T> e) const { return linear(c, e, "stop.w", "stop.b"); }

  Var<T> postnet(Ctx& c, Var<T> y) const {
    Var<T> h = y;
    for (std::size_t b = 0; b < cfg.postnet_blocks; ++b) {
      const std::string p = "post." + std::to_string(b) + ".";
      h = conv1d_same(h, param(c, p + "w"), param(c, p + "b"), cfg.postnet_kernel);
      if (b + 1 < cfg.postnet_blocks) {
        h = tanh_op(h);
        h = dropout(c, h, cfg.dropout, kSitePostnet + b);
      }
    }
    return add(y, h);
  }

  // Groups target frames into decoder inputs: step t consumes group t-1,
  // step 0 a zero group.
  Tensor<T> teacher_inputs(const Tensor<T>& target) const {
    const std::size_t gd = cfg.group_dim();
    const std::size_t steps = target.rows() / cfg.reduction;
    Tensor<T> in({steps, gd});
    for (std::size_t t = 1; t < steps; ++t)
      for (std::size_t j = 0; j < gd; ++j) in.at(t, j) = target.data[(t - 1) * gd + j];
    return in;
  }

  // real_frames (default: all of target) restricts y'/y'' to the unpadded
  // prefix; the post-net runs after that cut so trailing pad rows can never
  // leak into masked losses.
  ModelOutputs<T> forward_teacher_forced(Ctx& c, const std::vector<std::size_t>& tokens,
                                         const Tensor<T>& target, LatentMode mode,
                                         std::size_t real_frames = 0) const {
    if (target.ndim() != 2 || target.shape[1] != cfg.n_mels)
      throw std::invalid_argument("forward: target must be T×n_mels");
    if (target.rows() % cfg.reduction != 0)
      throw std::invalid_argument("forward: target length must be a multiple of the reduction");
    if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
    if (real_frames == 0) real_frames = target.rows();
    if (real_frames > target.rows())
      throw std::invalid_argument("forward: real_frames exceeds the padded target");

    const Var<T> text = gather_rows(param(c, "text_emb"), tokens);
    const Var<T> groups = c.tape->constant(teacher_inputs(target));
    const Var<T> mel_emb = prenet(c, groups);
    const Var<T> e = decode(c, text, mel_emb);

    ModelOutputs<T> out;
    out.e = e;
    out.latents = latent_sample(c, e, mode);
    Var<T> frames = latent_to_frames(c, out.latents.z);
    out.y_prime = real_frames == frames.rows() ? frames : row_slice(frames, 0, real_frames);
    out.stop_logits = stop_logits(c, e);
    out.y_dprime = postnet(c, out.y_prime);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.reserve(params.size());
    for (auto& [name, t] : params) out.emplace_back(name, &t);
    return out;
  }

 private:
  // Dropout sites get stable tags so a forward is reproducible from its rng.
  static constexpr std::uint64_t kSitePrenet = 0x10;
  static constexpr std::uint64_t kSiteInput = 0x20;
  static constexpr std::uint64_t kSiteAttn = 0x1000;
  static constexpr std::uint64_t kSiteFfn = 0x2000;
  static constexpr std::uint64_t kSitePostnet = 0x3000;
  static constexpr std::uint64_t kSiteLatentEps = 0x42;

  Var<T> attention(Ctx& c, Var<T> xn, const std::string& p, Var<T> mask, std::size_t l) const {
    const Var<T> q = linear(c, xn, p + "wq", p + "bq");
    const Var<T> k = linear(c, xn, p + "wk", p + "bk");
    const Var<T> v = linear(c, xn, p + "wv", p + "bv");
    const std::size_t dh = cfg.d_model / cfg.n_heads;
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    std::vector<Var<T>> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Var<T> qh = col_slice(q, h * dh, (h + 1) * dh);
      const Var<T> kh = col_slice(k, h * dh, (h + 1) * dh);
      const Var<T> vh = col_slice(v, h * dh, (h + 1) * dh);
      Var<T> scores = add(mul_scalar(matmul_nt(qh, kh), inv_sqrt), mask);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    const Var<T> merged = col_concat(heads);
    return dropout(c, linear(c, merged, p + "wo", p + "bo"), cfg.dropout, kSiteAttn + l);
  }

  Var<T> dropout(Ctx& c, Var<T> x, double rate, std::uint64_t site, bool always = false) const {
    if (rate <= 0.0 || (!c.train && !always)) return x;
    RngState r = c.rng.fork(site);
    return mul(x, c.tape->constant(Tensor<T>::dropout_mask(r, x.val().shape, 1.0 - rate)));
  }

  void add_param(std::uint64_t seed, const std::string& name, std::vector<std::size_t> shape,
                 T scale) {
    RngState r = RngState(seed).fork(fnv1a64(name));
    Tensor<T> t = Tensor<T>::gaussian(r, std::move(shape));
    for (T& v : t.data) v *= scale;
    params.emplace(name, std::move(t));
  }
  void add_xavier(std::uint64_t seed, const std::string& name, std::size_t fan_in,
                  std::size_t fan_out, std::vector<std::size_t> shape = {}) {
    if (shape.empty()) shape = {fan_in, fan_out};
    add_param(seed, name, std::move(shape),
              static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in + fan_out))));
  }
  void add_zeros(const std::string& name, std::vector<std::size_t> shape) {
    params.emplace(name, Tensor<T>::zeros(std::move(shape)));
  }
  void add_ones(const std::string& name, std::vector<std::size_t> shape) {
    params.emplace(name, Tensor<T>::full(std::move(shape), T(1)));
  }
};

}  // namespace melle
