#include "melle/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace melle::cfg {

namespace {

std::uint64_t parse_u64(const std::string& s) {
  if (s.empty() || s[0] == '-') throw std::invalid_argument("expected a non-negative integer: " + s);
  std::size_t pos = 0;
  std::uint64_t v;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a non-negative integer: " + s);
  }
  if (pos != s.size()) throw std::invalid_argument("trailing junk in integer: " + s);
  return v;
}

double parse_f64(const std::string& s) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number: " + s);
  }
  if (pos != s.size()) throw std::invalid_argument("trailing junk in number: " + s);
  return v;
}

std::string format_f64(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

using U64Ref = std::function<std::uint64_t&(RunConfig&)>;
using SizeRef = std::function<std::size_t&(RunConfig&)>;
using F64Ref = std::function<double&(RunConfig&)>;
using StrRef = std::function<std::string&(RunConfig&)>;

SchemaEntry size_entry(std::string key, std::string help, SizeRef ref) {
  return {std::move(key), FieldType::u64, std::move(help),
          [ref](RunConfig& c, const std::string& s) { ref(c) = parse_u64(s); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

SchemaEntry u64_entry(std::string key, std::string help, U64Ref ref) {
  return {std::move(key), FieldType::u64, std::move(help),
          [ref](RunConfig& c, const std::string& s) { ref(c) = parse_u64(s); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

SchemaEntry f64_entry(std::string key, std::string help, F64Ref ref) {
  return {std::move(key), FieldType::f64, std::move(help),
          [ref](RunConfig& c, const std::string& s) { ref(c) = parse_f64(s); },
          [ref](const RunConfig& c) { return format_f64(ref(const_cast<RunConfig&>(c))); }};
}

SchemaEntry choice_entry(std::string key, std::string help, StrRef ref,
                         std::vector<std::string> allowed) {
  return {std::move(key), FieldType::str, std::move(help),
          [ref, allowed](RunConfig& c, const std::string& s) {
            for (const auto& a : allowed)
              if (s == a) {
                ref(c) = s;
                return;
              }
            std::string opts;
            for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
            throw std::invalid_argument("value must be one of " + opts + ": " + s);
          },
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

std::vector<SchemaEntry> build_schema() {
  std::vector<SchemaEntry> s;
  // model
  s.push_back(size_entry("model.n_layers", "decoder blocks",
                         [](RunConfig& c) -> std::size_t& { return c.model.n_layers; }));
  s.push_back(size_entry("model.n_heads", "attention heads",
                         [](RunConfig& c) -> std::size_t& { return c.model.n_heads; }));
  s.push_back(size_entry("model.d_model", "residual width",
                         [](RunConfig& c) -> std::size_t& { return c.model.d_model; }));
  s.push_back(size_entry("model.d_ffn", "feed-forward width",
                         [](RunConfig& c) -> std::size_t& { return c.model.d_ffn; }));
  s.push_back(f64_entry("model.dropout", "transformer/post-net dropout",
                        [](RunConfig& c) -> double& { return c.model.dropout; }));
  s.push_back(size_entry("model.reduction", "mel frames per decode step",
                         [](RunConfig& c) -> std::size_t& { return c.model.reduction; }));
  s.push_back(size_entry("model.max_frames", "hard frame limit",
                         [](RunConfig& c) -> std::size_t& { return c.model.max_frames; }));
  s.push_back(size_entry("model.max_positions", "position table size",
                         [](RunConfig& c) -> std::size_t& { return c.model.max_positions; }));
  s.push_back(size_entry("model.postnet_channels", "post-net conv channels",
                         [](RunConfig& c) -> std::size_t& { return c.model.postnet_channels; }));
  s.push_back(size_entry("model.postnet_kernel", "post-net kernel width (odd)",
                         [](RunConfig& c) -> std::size_t& { return c.model.postnet_kernel; }));
  s.push_back(size_entry("model.postnet_blocks", "post-net conv blocks",
                         [](RunConfig& c) -> std::size_t& { return c.model.postnet_blocks; }));
  s.push_back(f64_entry("model.prenet_dropout", "always-on pre-net dropout",
                        [](RunConfig& c) -> double& { return c.model.prenet_dropout; }));
  s.push_back(f64_entry("model.logvar_min", "latent log-variance floor",
                        [](RunConfig& c) -> double& { return c.model.logvar_min; }));
  s.push_back(f64_entry("model.logvar_max", "latent log-variance ceiling",
                        [](RunConfig& c) -> double& { return c.model.logvar_max; }));
  // train
  s.push_back(size_entry("train.steps", "optimizer updates",
                         [](RunConfig& c) -> std::size_t& { return c.train.steps; }));
  s.push_back(size_entry("train.batch_frames", "padded-frame budget per batch",
                         [](RunConfig& c) -> std::size_t& { return c.train.batch_frames; }));
  s.push_back(f64_entry("train.peak_lr", "learning-rate peak after warmup",
                        [](RunConfig& c) -> double& { return c.train.peak_lr; }));
  s.push_back(size_entry("train.warmup_steps", "linear warmup length",
                         [](RunConfig& c) -> std::size_t& { return c.train.warmup_steps; }));
  s.push_back(size_entry("train.lambda_breakpoint", "step where the KL weight turns on",
                         [](RunConfig& c) -> std::size_t& { return c.train.lambda_breakpoint; }));
  s.push_back(f64_entry("train.lambda_value", "KL weight after the breakpoint",
                        [](RunConfig& c) -> double& { return c.train.lambda_value; }));
  s.push_back(f64_entry("train.beta", "flux loss weight",
                        [](RunConfig& c) -> double& { return c.train.beta; }));
  s.push_back(f64_entry("train.gamma", "stop loss weight",
                        [](RunConfig& c) -> double& { return c.train.gamma; }));
  s.push_back(f64_entry("train.pos_weight", "stop BCE positive-class weight",
                        [](RunConfig& c) -> double& { return c.train.pos_weight; }));
  s.push_back(f64_entry("train.grad_clip", "global gradient-norm ceiling",
                        [](RunConfig& c) -> double& { return c.train.grad_clip; }));
  s.push_back(f64_entry("train.weight_decay", "AdamW decoupled decay",
                        [](RunConfig& c) -> double& { return c.train.weight_decay; }));
  s.push_back(size_entry("train.checkpoint_interval", "steps between checkpoints",
                         [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_interval; }));
  s.push_back(u64_entry("train.seed", "training seed",
                        [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
  s.push_back(SchemaEntry{
      "train.latent", FieldType::str, "latent mode during training: sample|mean",
      [](RunConfig& c, const std::string& v) { c.train.mode = parse_latent_mode(v); },
      [](const RunConfig& c) {
        return c.train.mode == LatentMode::sample ? "sample" : "mean";
      }});
  // synth
  s.push_back(choice_entry("synth.mode", "prompting scheme: cont|cross",
                           [](RunConfig& c) -> std::string& { return c.synth.mode; },
                           {"cont", "cross"}));
  s.push_back(choice_entry("synth.sampling", "decode-time latent mode: sample|mean",
                           [](RunConfig& c) -> std::string& { return c.synth.sampling; },
                           {"sample", "mean"}));
  s.push_back(size_entry("synth.n_samples", "candidates per utterance",
                         [](RunConfig& c) -> std::size_t& { return c.synth.n_samples; }));
  s.push_back(size_entry("synth.max_frames", "generation cap; 0 = 20x tokens",
                         [](RunConfig& c) -> std::size_t& { return c.synth.max_frames; }));
  s.push_back(size_entry("synth.prompt_frames", "continuation prefix; 0 = 3 s",
                         [](RunConfig& c) -> std::size_t& { return c.synth.prompt_frames; }));
  s.push_back(size_entry("synth.iterations", "griffin-lim iterations",
                         [](RunConfig& c) -> std::size_t& { return c.synth.iterations; }));
  s.push_back(u64_entry("synth.seed", "synthesis seed",
                        [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }));
  return s;
}

}  // namespace

LatentMode parse_latent_mode(const std::string& s) {
  if (s == "sample") return LatentMode::sample;
  if (s == "mean") return LatentMode::mean;
  throw std::invalid_argument("latent mode must be sample or mean: " + s);
}

const std::vector<SchemaEntry>& schema() {
  static const std::vector<SchemaEntry> s = build_schema();
  return s;
}

void set_key(RunConfig& rc, const std::string& key, const std::string& value) {
  for (const SchemaEntry& e : schema()) {
    if (e.key == key) {
      e.set(rc, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + key);
}

void load_file(RunConfig& rc, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::string line, section;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw std::invalid_argument(where + ": malformed section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + ": empty key");
    const std::string full = key.find('.') != std::string::npos
                                 ? key
                                 : (section.empty() ? key : section + "." + key);
    try {
      set_key(rc, full, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  }
}

std::string dump(const RunConfig& rc) {
  std::string out;
  std::string section;
  for (const SchemaEntry& e : schema()) {
    const std::string sec = e.key.substr(0, e.key.find('.'));
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += e.key.substr(sec.size() + 1) + " = " + e.get(rc) + "\n";
  }
  return out;
}

void apply_env_seed(RunConfig& rc) {
  const char* env = std::getenv("MELLE_SEED");
  if (env == nullptr) return;
  const std::uint64_t seed = parse_u64(env);
  rc.train.seed = seed;
  rc.synth.seed = seed;
}

}  // namespace melle::cfg
