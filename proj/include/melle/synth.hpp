#pragma once

// Prompted autoregressive inference. Each decode step re-runs the full
// decoder over [text; zero-group; prompt groups; generated groups] — no
// key/value caching, which keeps the loop an exact restatement of the
// teacher-forced forward. One rng per run: positions keep their pre-net
// masks and latent noise across iterations, matching what an incremental
// decoder would have drawn.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "melle/audio.hpp"
#include "melle/errors.hpp"
#include "melle/griffin_lim.hpp"
#include "melle/mel.hpp"
#include "melle/model.hpp"
#include "melle/rng.hpp"
#include "melle/tape.hpp"
#include "melle/tensor.hpp"
#include "melle/tokenizer.hpp"
#include "melle/trainer.hpp"

namespace melle::synth {

enum class Mode { continuation, cross_sentence };

// 3 s of acoustic prompt at 62.5 frames/s.
inline constexpr std::size_t kDefaultPromptFrames = 187;

struct SynthesisRequest {
  std::vector<std::size_t> prompt_tokens;  // transcript of the prompt audio (cross-sentence)
  Tensor<float> prompt_mel;                // prompt audio features, T×80
  std::vector<std::size_t> target_tokens;  // text to synthesize, EOS-terminated
  Mode mode = Mode::cross_sentence;
  LatentMode sampling = LatentMode::sample;
  std::size_t max_frames = 0;      // 0: 20× the token count
  std::size_t prompt_frames = 0;   // continuation prefix length; 0: 3 s worth
  std::uint64_t seed = 0;
};

struct SynthesisResult {
  Tensor<float> mel;         // refined y'', generated frames only
  Tensor<float> mel_coarse;  // y' before the post-net
  std::size_t frame_count = 0;
  std::size_t stop_step = 0;  // 1-based decode step that fired; 0 if none
  std::vector<double> stop_probs;
  bool truncated = false;
};

struct AssembledPrompt {
  std::vector<std::size_t> tokens;
  Tensor<float> prefix_groups;  // P × (r·80)
  std::size_t prefix_frames = 0;
};

// Continuation keeps the target transcript and a leading slice of the same
// utterance's audio; cross-sentence concatenates both transcripts (single
// EOS at the very end) over the whole reference audio.
inline AssembledPrompt assemble_prompt(const SynthesisRequest& req, std::size_t r) {
  if (req.target_tokens.empty()) throw std::invalid_argument("synth: empty target text");
  if (req.prompt_mel.ndim() != 2 || req.prompt_mel.rows() < r)
    throw std::invalid_argument("synth: prompt audio shorter than one group");

  AssembledPrompt ap;
  std::size_t frames = req.prompt_mel.rows();
  if (req.mode == Mode::continuation) {
    const std::size_t want = req.prompt_frames > 0 ? req.prompt_frames : kDefaultPromptFrames;
    frames = std::min(frames, want);
    ap.tokens = req.target_tokens;
  } else {
    if (req.prompt_tokens.empty()) throw std::invalid_argument("synth: empty prompt text");
    ap.tokens = req.prompt_tokens;
    if (ap.tokens.back() == text::Vocab::kEos) ap.tokens.pop_back();
    ap.tokens.insert(ap.tokens.end(), req.target_tokens.begin(), req.target_tokens.end());
  }
  frames = frames / r * r;  // whole groups only
  if (frames == 0) throw std::invalid_argument("synth: prompt audio shorter than one group");
  ap.prefix_frames = frames;

  Tensor<float> head({frames, req.prompt_mel.cols()});
  std::copy(req.prompt_mel.data.begin(),
            req.prompt_mel.data.begin() + static_cast<std::ptrdiff_t>(head.numel()),
            head.data.begin());
  ap.prefix_groups = train::partition_reduction(head, r);
  return ap;
}

template <typename T>
SynthesisResult generate(const SynthesisRequest& req, const Model<T>& model) {
  const std::size_t r = model.cfg.reduction;
  const std::size_t gd = model.cfg.group_dim();
  const AssembledPrompt ap = assemble_prompt(req, r);
  const std::size_t p_groups = ap.prefix_groups.rows();

  const std::size_t max_frames =
      req.max_frames > 0 ? req.max_frames : 20 * ap.tokens.size();
  const std::size_t max_groups = max_frames / r;
  if (max_groups == 0) throw std::invalid_argument("synth: max_frames below one group");

  SynthesisResult res;
  std::vector<Tensor<T>> generated;  // accepted groups, each 1×(r·80)
  const RngState run_rng(req.seed);

  for (std::size_t k = 1; k <= max_groups; ++k) {
    // Decoder inputs for steps 0..p+k-1: zero begin group, then every known
    // group shifted one step right.
    const std::size_t m = p_groups + k;
    Tensor<T> inputs({m, gd});
    for (std::size_t g = 0; g < p_groups; ++g)
      for (std::size_t j = 0; j < gd; ++j)
        inputs.at(g + 1, j) = static_cast<T>(ap.prefix_groups.at(g, j));
    for (std::size_t g = 0; g + 1 < k; ++g)
      for (std::size_t j = 0; j < gd; ++j) inputs.at(p_groups + 1 + g, j) = generated[g].data[j];

    Tape<T> tape;
    auto c = model.ctx(tape, run_rng, false);
    tape.set_grad_enabled(false);
    const Var<T> text = gather_rows(model.param(c, "text_emb"), ap.tokens);
    const Var<T> mel_emb = model.prenet(c, tape.constant(std::move(inputs)));
    const Var<T> e = model.decode(c, text, mel_emb);
    const auto latents = model.latent_sample(c, e, req.sampling);
    const Var<T> z_last = row_slice(latents.z, m - 1, m);
    const Var<T> frames = model.latent_to_frames(c, z_last);  // r×80

    const T logit = model.stop_logits(c, row_slice(e, m - 1, m)).val().data[0];
    const double p_stop = 1.0 / (1.0 + std::exp(-static_cast<double>(logit)));
    res.stop_probs.push_back(p_stop);

    if (!frames.val().all_finite())
      throw NumericError("synth: non-finite frame at decode step " + std::to_string(k));
    Tensor<T> group({1, gd});
    group.data = frames.val().data;
    generated.push_back(std::move(group));

    if (p_stop > 0.5) {  // this step's frames are kept
      res.stop_step = k;
      break;
    }
  }
  res.truncated = res.stop_step == 0;

  const std::size_t n_groups = generated.size();
  res.frame_count = n_groups * r;
  Tensor<T> y_prime({res.frame_count, model.cfg.n_mels});
  for (std::size_t g = 0; g < n_groups; ++g)
    std::copy(generated[g].data.begin(), generated[g].data.end(),
              y_prime.data.begin() + static_cast<std::ptrdiff_t>(g * gd));

  // Post-net once, over the full coarse spectrogram.
  Tape<T> tape;
  auto c = model.ctx(tape, run_rng, false);
  tape.set_grad_enabled(false);
  const Tensor<T> y_dprime = model.postnet(c, tape.constant(y_prime)).val();

  res.mel_coarse = Tensor<float>({res.frame_count, model.cfg.n_mels});
  res.mel = Tensor<float>({res.frame_count, model.cfg.n_mels});
  for (std::size_t i = 0; i < y_prime.numel(); ++i) {
    res.mel_coarse.data[i] = static_cast<float>(y_prime.data[i]);
    res.mel.data[i] = static_cast<float>(y_dprime.data[i]);
  }
  return res;
}

using Scorer = std::function<double(const SynthesisResult&)>;

// Mean stop-probability margin; truncated candidates rank below everything.
inline double default_score(const SynthesisResult& res) {
  if (res.truncated) return -1.0;
  double acc = 0.0;
  for (double p : res.stop_probs) acc += std::abs(p - 0.5);
  return res.stop_probs.empty() ? -1.0 : acc / static_cast<double>(res.stop_probs.size());
}

struct SampledResult {
  SynthesisResult result;
  std::uint64_t seed = 0;
  std::size_t sample_index = 0;
  double score = 0.0;
};

// n seeded generations (seed base+k); argmax of the scorer, ties to the
// lowest index. Individual failures are tolerated unless every draw fails.
template <typename T>
SampledResult multi_sample(const SynthesisRequest& req, const Model<T>& model, std::size_t n,
                           const Scorer& scorer = default_score) {
  if (n < 1) throw std::invalid_argument("multi_sample: need n >= 1");
  SampledResult best;
  bool have = false;
  std::string last_error;
  for (std::size_t k = 0; k < n; ++k) {
    SynthesisRequest sub = req;
    sub.seed = req.seed + k;
    try {
      SynthesisResult r = generate(sub, model);
      const double score = scorer(r);
      if (!have || score > best.score) {
        best = {std::move(r), sub.seed, k, score};
        have = true;
      }
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  if (!have) throw std::runtime_error("multi_sample: every sample failed: " + last_error);
  return best;
}

// Stable identity for a request, independent of the seed (the seed is
// reported alongside).
inline std::uint64_t request_hash(const SynthesisRequest& req) {
  std::string s = req.mode == Mode::continuation ? "cont" : "cross";
  s += req.sampling == LatentMode::sample ? "|sample|" : "|mean|";
  for (std::size_t t : req.prompt_tokens) s += std::to_string(t) + ",";
  s += "|";
  for (std::size_t t : req.target_tokens) s += std::to_string(t) + ",";
  s += "|" + std::to_string(req.prompt_mel.rows()) + "x" + std::to_string(req.prompt_mel.cols());
  return fnv1a64(s);
}

struct VocoderOpts {
  mel::MelParams params;
  std::size_t iterations = 32;
};

struct SynthesisReport {
  std::uint64_t request_hash = 0;
  std::uint64_t seed = 0;
  std::size_t frame_count = 0;
  std::size_t stop_step = 0;
  bool truncated = false;
  double score = 0.0;
};

// generate (best of n) → Griffin-Lim → WAV, with the mel persisted losslessly
// alongside as <wav path>.melf.
template <typename T>
SynthesisReport synthesize_to_wav(const SynthesisRequest& req, const Model<T>& model,
                                  std::size_t n_samples, const std::string& wav_path,
                                  const VocoderOpts& opts = {}) {
  const SampledResult pick = multi_sample(req, model, n_samples);
  const std::vector<float> audio = gl::mel_to_audio(pick.result.mel, opts.params, opts.iterations);
  audio::write_wav(wav_path, audio, opts.params.sample_rate);
  mel::write_melf(wav_path + ".melf", pick.result.mel);

  SynthesisReport rep;
  rep.request_hash = request_hash(req);
  rep.seed = pick.seed;
  rep.frame_count = pick.result.frame_count;
  rep.stop_step = pick.result.stop_step;
  rep.truncated = pick.result.truncated;
  rep.score = pick.score;
  return rep;
}

}  // namespace melle::synth
