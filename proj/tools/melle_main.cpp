// Operator CLI: extract / train / synth / gradcheck / ablate.
//
// Configuration flows defaults → MELLE_SEED → --config file → --section.key
// flags; the flag surface is generated from the same schema table the file
// parser uses. Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "melle/audio.hpp"
#include "melle/config.hpp"
#include "melle/gradcheck_suite.hpp"
#include "melle/kernels.hpp"
#include "melle/mel.hpp"
#include "melle/model.hpp"
#include "melle/synth.hpp"
#include "melle/tokenizer.hpp"
#include "melle/trainer.hpp"

namespace fs = std::filesystem;
using melle::Tensor;

namespace {

// WAV (resampled to the protocol rate) or pass-through MELF, by extension.
Tensor<float> load_features(const std::string& path, const melle::mel::MelParams& params) {
  if (fs::path(path).extension() == ".melf") return melle::mel::read_melf(path);
  const melle::audio::Wave w = melle::audio::read_wav(path, params.sample_rate);
  return melle::mel::extract(w.samples, params);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- extract ----

int cmd_extract(const std::string& manifest, const std::string& out_dir) {
  const auto entries = melle::train::read_manifest(manifest);
  if (!entries.empty()) fs::create_directories(out_dir);
  const melle::mel::MelParams params;
  std::size_t failures = 0, written = 0, skipped = 0;
  for (const auto& e : entries) {
    const fs::path out = fs::path(out_dir) / (fs::path(e.path).stem().string() + ".melf");
    if (fs::exists(out)) {
      ++skipped;
      continue;
    }
    try {
      const Tensor<float> m = load_features(e.path, params);
      melle::mel::write_melf(out.string(), m);
      ++written;
      std::printf("extract: %s -> %s (%zu frames)\n", e.path.c_str(), out.c_str(), m.rows());
    } catch (const std::exception& ex) {
      ++failures;
      std::fprintf(stderr, "extract: %s: %s\n", e.path.c_str(), ex.what());
    }
  }
  std::printf("extract: %zu written, %zu skipped, %zu failed\n", written, skipped, failures);
  return failures == 0 ? 0 : 2;
}

// ---- train ----

struct Corpus {
  melle::text::Vocab vocab;
  std::vector<melle::train::TrainItem<float>> items;
};

Corpus load_corpus(const std::string& manifest_path) {
  const auto entries = melle::train::read_manifest(manifest_path);
  if (entries.empty()) throw std::runtime_error("empty manifest: " + manifest_path);
  std::vector<std::string> transcripts;
  transcripts.reserve(entries.size());
  for (const auto& e : entries) transcripts.push_back(e.transcript);
  Corpus c{melle::text::Vocab::build(transcripts), {}};
  const melle::mel::MelParams params;
  c.items.reserve(entries.size());
  for (const auto& e : entries)
    c.items.push_back({c.vocab.encode(e.transcript), load_features(e.path, params)});
  return c;
}

std::string checkpoint_path(const std::string& out_dir, std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06zu.bin", step);
  return (fs::path(out_dir) / buf).string();
}

int cmd_train(melle::cfg::RunConfig rc, const std::string& manifest, const std::string& out_dir,
              const std::string& resume) {
  Corpus corpus = load_corpus(manifest);
  rc.model.vocab_size = corpus.vocab.size();

  melle::train::Trainer<float> tr;
  const bool resuming = !resume.empty();
  if (resuming) {
    melle::text::Vocab ck_vocab;
    tr = melle::train::load_checkpoint<float>(resume, ck_vocab, &rc.model);
    if (ck_vocab.symbols() != corpus.vocab.symbols())
      throw std::runtime_error("resume: checkpoint vocab does not match the manifest corpus");
    tr.cfg = rc.train;
    tr.opt.weight_decay = rc.train.weight_decay;
    std::printf("train: resumed %s at step %zu\n", resume.c_str(), tr.step);
  } else {
    tr = melle::train::Trainer<float>::create(rc.model, rc.train);
  }

  fs::create_directories(out_dir);
  corpus.vocab.save((fs::path(out_dir) / "vocab.txt").string());
  {
    std::ofstream f(fs::path(out_dir) / "run_config.cfg", std::ios::trunc);
    f << melle::cfg::dump(rc);
  }
  std::ofstream metrics(fs::path(out_dir) / "metrics.tsv",
                        resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics in " + out_dir);

  melle::train::RunHooks<float> hooks;
  hooks.metrics = &metrics;
  hooks.on_checkpoint = [&](const melle::train::Trainer<float>& t) {
    const std::string path = checkpoint_path(out_dir, t.step);
    melle::train::save_checkpoint(path, t, corpus.vocab);
    std::printf("train: step %zu -> %s\n", t.step, path.c_str());
  };
  const melle::train::StepStats last = melle::train::run_training(tr, corpus.items, hooks);
  std::printf("train: done after %zu updates (reg %.6g, kl %.6g, flux %.6g, stop %.6g, total %.6g)\n",
              tr.step, last.reg, last.kl, last.flux, last.stop, last.total);
  return 0;
}

// ---- synth ----

struct SynthArgs {
  std::string checkpoint, prompt_audio, prompt_text, target_text, out;
};

int cmd_synth(const melle::cfg::RunConfig& rc, const SynthArgs& a) {
  melle::text::Vocab vocab;
  const melle::train::Trainer<float> tr = melle::train::load_checkpoint<float>(a.checkpoint, vocab);

  melle::synth::SynthesisRequest req;
  req.mode = rc.synth.mode == "cont" ? melle::synth::Mode::continuation
                                     : melle::synth::Mode::cross_sentence;
  req.sampling = melle::cfg::parse_latent_mode(rc.synth.sampling);
  req.max_frames = rc.synth.max_frames;
  req.prompt_frames = rc.synth.prompt_frames;
  req.seed = rc.synth.seed;
  req.target_tokens = vocab.encode(a.target_text);
  if (req.mode == melle::synth::Mode::cross_sentence) {
    if (a.prompt_text.empty())
      throw std::invalid_argument("cross-sentence mode needs --prompt-text");
    req.prompt_tokens = vocab.encode(a.prompt_text);
  }
  melle::synth::VocoderOpts opts;
  req.prompt_mel = load_features(a.prompt_audio, opts.params);
  opts.iterations = rc.synth.iterations;

  if (const fs::path parent = fs::path(a.out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  const melle::synth::SynthesisReport rep =
      melle::synth::synthesize_to_wav(req, tr.model, rc.synth.n_samples, a.out, opts);

  const nlohmann::json j{{"request", hex64(rep.request_hash)}, {"seed", rep.seed},
                         {"frames", rep.frame_count},         {"stop_step", rep.stop_step},
                         {"truncated", rep.truncated},        {"score", rep.score},
                         {"wav", a.out}};
  std::ofstream log(a.out + ".jsonl", std::ios::app);
  log << j.dump() << "\n";
  std::printf("synth: %s (%zu frames, seed %llu%s)\n", a.out.c_str(), rep.frame_count,
              static_cast<unsigned long long>(rep.seed), rep.truncated ? ", truncated" : "");
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(const std::string& component) {
  const auto results = melle::gck::run_suite(component);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("gradcheck %-7s %-11s max rel err %.3e (tol %.0e, %zu probes)  %s\n",
                r.component.c_str(), r.scenario.c_str(), r.max_rel_err, r.tolerance, r.checked,
                r.pass ? "ok" : "FAIL");
    ok = ok && r.pass;
  }
  return ok ? 0 : 3;
}

// ---- ablate ----

struct AblationRow {
  std::string name;
  melle::train::StepStats final_stats;
  std::size_t synth_frames = 0;
  std::size_t stop_step = 0;
  bool truncated = false;
};

AblationRow run_variant(const std::string& name, const melle::cfg::RunConfig& rc,
                        const Corpus& corpus, const std::string& out_dir,
                        melle::LatentMode infer_mode,
                        const melle::train::Trainer<float>** reuse,
                        melle::train::Trainer<float>& storage) {
  AblationRow row;
  row.name = name;
  if (reuse != nullptr && *reuse != nullptr) {
    storage = **reuse;  // mean-mode inference reuses the baseline weights
  } else {
    storage = melle::train::Trainer<float>::create(rc.model, rc.train);
    std::ofstream metrics(fs::path(out_dir) / ("ablate_" + name + ".tsv"), std::ios::trunc);
    melle::train::RunHooks<float> hooks;
    hooks.metrics = &metrics;
    row.final_stats = melle::train::run_training(storage, corpus.items, hooks);
  }

  // Probe: continue the first utterance from a quarter-length prompt.
  const auto& probe = corpus.items.front();
  const std::size_t r = rc.model.reduction;
  melle::synth::SynthesisRequest req;
  req.mode = melle::synth::Mode::continuation;
  req.sampling = infer_mode;
  req.target_tokens = probe.tokens;
  req.prompt_mel = probe.mel;
  req.prompt_frames = std::max(r, probe.mel.rows() / 4 / r * r);
  req.max_frames = 3 * probe.mel.rows();
  req.seed = rc.synth.seed;
  const melle::synth::SynthesisResult res = melle::synth::generate(req, storage.model);
  row.synth_frames = res.frame_count;
  row.stop_step = res.stop_step;
  row.truncated = res.truncated;
  return row;
}

int cmd_ablate(const melle::cfg::RunConfig& rc, const std::string& manifest,
               const std::string& out_dir, bool only_no_latent, bool only_no_flux,
               bool only_mean_infer) {
  Corpus corpus = load_corpus(manifest);
  fs::create_directories(out_dir);
  melle::cfg::RunConfig base = rc;
  base.model.vocab_size = corpus.vocab.size();

  const bool all = !(only_no_latent || only_no_flux || only_mean_infer);
  std::vector<AblationRow> rows;
  melle::train::Trainer<float> baseline_tr, variant_tr;
  const melle::train::Trainer<float>* baseline = nullptr;

  // Baseline always runs: it anchors the comparison and provides the weights
  // for the mean-mode inference row.
  rows.push_back(run_variant("baseline", base, corpus, out_dir, melle::LatentMode::sample,
                             nullptr, baseline_tr));
  baseline = &baseline_tr;

  if (all || only_no_latent) {
    // Latent sampling off: deterministic linear head (mean mode), no KL term.
    melle::cfg::RunConfig v = base;
    v.train.mode = melle::LatentMode::mean;
    v.train.lambda_value = 0.0;
    rows.push_back(run_variant("no_latent_sampling", v, corpus, out_dir,
                               melle::LatentMode::mean, nullptr, variant_tr));
  }
  if (all || only_no_flux) {
    melle::cfg::RunConfig v = base;
    v.train.beta = 0.0;
    rows.push_back(run_variant("no_flux", v, corpus, out_dir, melle::LatentMode::sample,
                               nullptr, variant_tr));
  }
  if (all || only_mean_infer) {
    AblationRow row = run_variant("mean_inference", base, corpus, out_dir,
                                  melle::LatentMode::mean, &baseline, variant_tr);
    row.final_stats = rows.front().final_stats;  // same training run
    rows.push_back(row);
  }

  std::string table =
      "variant\treg\tkl\tflux\tstop\ttotal\tsynth_frames\tstop_step\ttruncated\n";
  bool finite = true;
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%zu\t%zu\t%s\n",
                  r.name.c_str(), r.final_stats.reg, r.final_stats.kl, r.final_stats.flux,
                  r.final_stats.stop, r.final_stats.total, r.synth_frames, r.stop_step,
                  r.truncated ? "yes" : "no");
    table += line;
    finite = finite && std::isfinite(r.final_stats.total);
  }
  std::fputs(table.c_str(), stdout);
  std::ofstream f(fs::path(out_dir) / "ablation.tsv", std::ios::trunc);
  f << table;
  if (!finite) throw melle::NumericError("ablate: non-finite final loss");
  return 0;
}

// Registers one --section.key flag per schema entry; values apply after the
// config file so flags win.
void add_schema_flags(CLI::App* cmd, std::vector<std::pair<std::string, std::string>>* overrides) {
  for (const auto& e : melle::cfg::schema()) {
    cmd->add_option_function<std::string>(
           "--" + e.key,
           [overrides, key = e.key](const std::string& v) { overrides->emplace_back(key, v); },
           e.help)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

melle::cfg::RunConfig resolve_config(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  melle::cfg::RunConfig rc;
  melle::cfg::apply_env_seed(rc);
  if (!config_path.empty()) melle::cfg::load_file(rc, config_path);
  for (const auto& [key, value] : overrides) melle::cfg::set_key(rc, key, value);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"melle: continuous-token autoregressive speech synthesis"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.\n"
             "MELLE_SEED seeds train and synth unless overridden per command.");

  std::string config_path, manifest, out_dir, resume, component = "all";
  SynthArgs synth_args;
  std::vector<std::pair<std::string, std::string>> overrides;
  bool only_no_latent = false, only_no_flux = false;
  std::string ablate_sampling;

  CLI::App* c_extract = app.add_subcommand("extract", "batch feature extraction to MELF");
  c_extract->add_option("--manifest", manifest, "tsv: <wav or melf path>\\t<transcript>")
      ->required();
  c_extract->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* c_train = app.add_subcommand("train", "teacher-forced training");
  c_train->add_option("--config", config_path, "key = value config file");
  c_train->add_option("--manifest", manifest, "training utterances")->required();
  c_train->add_option("--out-dir", out_dir, "checkpoints + metrics directory")->required();
  c_train->add_option("--resume", resume, "checkpoint to continue from");
  add_schema_flags(c_train, &overrides);

  CLI::App* c_synth = app.add_subcommand("synth", "prompted synthesis to WAV");
  c_synth->add_option("--checkpoint", synth_args.checkpoint, "trained model")->required();
  c_synth->add_option("--prompt-wav", synth_args.prompt_audio, "prompt audio (wav or melf)")
      ->required();
  c_synth->add_option("--prompt-text", synth_args.prompt_text,
                      "prompt transcript (cross-sentence mode)");
  c_synth->add_option("--target-text", synth_args.target_text, "text to synthesize")->required();
  c_synth->add_option("--out", synth_args.out, "output wav path")->required();
  c_synth->add_option("--config", config_path, "key = value config file");
  // Short aliases for the common synthesis knobs.
  for (const auto& [flag, key] :
       std::vector<std::pair<std::string, std::string>>{{"--mode", "synth.mode"},
                                                        {"--sampling", "synth.sampling"},
                                                        {"--n-samples", "synth.n_samples"},
                                                        {"--seed", "synth.seed"}}) {
    c_synth->add_option_function<std::string>(
               flag,
               [&overrides, key = key](const std::string& v) { overrides.emplace_back(key, v); },
               "alias for --" + key)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
  add_schema_flags(c_synth, &overrides);

  CLI::App* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  c_gradcheck->add_option("--component", component, "ops | losses | model | all");

  CLI::App* c_ablate = app.add_subcommand("ablate", "train and compare loss-term variants");
  c_ablate->add_option("--config", config_path, "key = value config file");
  c_ablate->add_option("--manifest", manifest, "training utterances")->required();
  c_ablate->add_option("--out-dir", out_dir, "metrics + table directory")->required();
  c_ablate->add_flag("--no-latent-sampling", only_no_latent,
                     "run only the deterministic-head variant (plus baseline)");
  c_ablate->add_flag("--no-flux", only_no_flux, "run only the beta=0 variant (plus baseline)");
  c_ablate->add_option("--sampling", ablate_sampling,
                       "'mean' runs only the mean-mode inference row (plus baseline)")
      ->check(CLI::IsMember({"mean"}));
  add_schema_flags(c_ablate, &overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_extract->parsed()) return cmd_extract(manifest, out_dir);
    if (c_train->parsed())
      return cmd_train(resolve_config(config_path, overrides), manifest, out_dir, resume);
    if (c_synth->parsed()) return cmd_synth(resolve_config(config_path, overrides), synth_args);
    if (c_gradcheck->parsed()) return cmd_gradcheck(component);
    if (c_ablate->parsed())
      return cmd_ablate(resolve_config(config_path, overrides), manifest, out_dir,
                        only_no_latent, only_no_flux, ablate_sampling == "mean");
    return 1;
  } catch (const melle::NumericError& e) {
    std::fprintf(stderr, "melle: numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "melle: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "melle: %s\n", e.what());
    return 2;
  }
}
