#pragma once

// Run configuration: one schema table drives the config-file parser, the
// flag surface, and the canonical dump, so the three can never drift apart.
// Files are ini-style — [section] headers, key=value lines, '#' comments.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "melle/errors.hpp"
#include "melle/model.hpp"
#include "melle/trainer.hpp"

namespace melle::cfg {

using melle::NumericError;

struct SynthDefaults {
  std::string mode = "cross";       // "cont" | "cross"
  std::string sampling = "sample";  // "sample" | "mean"
  std::size_t n_samples = 1;
  std::size_t max_frames = 0;     // 0: 20x token count
  std::size_t prompt_frames = 0;  // 0: 3 s worth
  std::size_t iterations = 32;    // griffin-lim
  std::uint64_t seed = 0;
};

struct RunConfig {
  ModelConfig model;
  train::TrainConfig train;
  SynthDefaults synth;
};

enum class FieldType { u64, f64, str };

struct SchemaEntry {
  std::string key;  // dotted: "section.name"
  FieldType type;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;  // validates
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<SchemaEntry>& schema();

// Throws std::invalid_argument for unknown keys or unparseable values.
void set_key(RunConfig& rc, const std::string& key, const std::string& value);
void load_file(RunConfig& rc, const std::string& path);

// Canonical "key = value" listing in schema order.
std::string dump(const RunConfig& rc);

// MELLE_SEED, when set, becomes the default for both seeds; explicit config
// keys and flags still win.
void apply_env_seed(RunConfig& rc);

LatentMode parse_latent_mode(const std::string& s);  // "sample" | "mean"

}  // namespace melle::cfg
