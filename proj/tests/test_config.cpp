#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "melle/config.hpp"

using melle::LatentMode;
using melle::cfg::RunConfig;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("melle_cfg_" + name);
}

void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::trunc);
  f << body;
  REQUIRE(static_cast<bool>(f));
}

}  // namespace

TEST_CASE("schema keys are dotted, unique, and documented") {
  std::set<std::string> seen;
  for (const auto& e : melle::cfg::schema()) {
    const auto dot = e.key.find('.');
    CHECK(dot != std::string::npos);
    const std::string section = e.key.substr(0, dot);
    CHECK((section == "model" || section == "train" || section == "synth"));
    CHECK(!e.help.empty());
    CHECK(seen.insert(e.key).second);
  }
  CHECK(seen.size() == 35);
}

TEST_CASE("every getter reflects what the setter stored") {
  RunConfig rc;
  for (const auto& e : melle::cfg::schema()) {
    const std::string before = e.get(rc);
    e.set(rc, before);  // canonical form must parse back
    CHECK(e.get(rc) == before);
  }
  melle::cfg::set_key(rc, "model.d_model", "192");
  CHECK(rc.model.d_model == 192);
  melle::cfg::set_key(rc, "train.peak_lr", "1.5e-3");
  CHECK(rc.train.peak_lr == doctest::Approx(1.5e-3));
  melle::cfg::set_key(rc, "train.latent", "mean");
  CHECK(rc.train.mode == LatentMode::mean);
  melle::cfg::set_key(rc, "synth.mode", "cont");
  CHECK(rc.synth.mode == "cont");
}

TEST_CASE("bad keys and bad values are rejected") {
  RunConfig rc;
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "model.bogus", "1"), std::invalid_argument);
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "d_model", "64"), std::invalid_argument);  // undotted
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "model.d_model", "-3"), std::invalid_argument);
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "model.d_model", "64x"), std::invalid_argument);
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "model.d_model", ""), std::invalid_argument);
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "train.peak_lr", "fast"), std::invalid_argument);
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "synth.mode", "both"), std::invalid_argument);
  CHECK_THROWS_AS(melle::cfg::set_key(rc, "train.latent", "map"), std::invalid_argument);
}

TEST_CASE("config files: sections, comments, dotted keys, CRLF") {
  const auto p = temp_path("ok.cfg");
  write_text(p,
             "# top comment\n"
             "[model]\n"
             "d_model = 96   # inline comment\n"
             "n_heads=3\r\n"
             "\n"
             "train.steps = 42\n"
             "[synth]\n"
             "mode = cont\n");
  RunConfig rc;
  melle::cfg::load_file(rc, p.string());
  CHECK(rc.model.d_model == 96);
  CHECK(rc.model.n_heads == 3);
  CHECK(rc.train.steps == 42);
  CHECK(rc.synth.mode == "cont");
  std::filesystem::remove(p);
}

TEST_CASE("config file errors carry path and line number") {
  const auto p = temp_path("bad.cfg");

  write_text(p, "[model]\nwidth = 4\n");
  RunConfig rc;
  CHECK_THROWS_WITH_AS(melle::cfg::load_file(rc, p.string()),
                       doctest::Contains((p.string() + ":2").c_str()), std::invalid_argument);

  write_text(p, "[model\nd_model = 4\n");
  CHECK_THROWS_WITH_AS(melle::cfg::load_file(rc, p.string()), doctest::Contains(":1"),
                       std::invalid_argument);

  write_text(p, "[model]\nd_model 4\n");
  CHECK_THROWS_WITH_AS(melle::cfg::load_file(rc, p.string()),
                       doctest::Contains("expected key = value"), std::invalid_argument);

  write_text(p, "[train]\npeak_lr = quick\n");
  CHECK_THROWS_AS(melle::cfg::load_file(rc, p.string()), std::invalid_argument);

  CHECK_THROWS_AS(melle::cfg::load_file(rc, temp_path("missing.cfg").string()),
                  std::runtime_error);
  std::filesystem::remove(p);
}

TEST_CASE("dump and reload round-trips every field") {
  RunConfig rc;
  rc.model.n_layers = 3;
  rc.model.d_model = 48;
  rc.model.dropout = 0.25;
  rc.train.steps = 77;
  rc.train.peak_lr = 2.5e-4;
  rc.train.mode = LatentMode::mean;
  rc.train.seed = 99;
  rc.synth.mode = "cont";
  rc.synth.n_samples = 4;
  rc.synth.seed = 1234567;

  const std::string text = melle::cfg::dump(rc);
  CHECK(text.find("[model]") != std::string::npos);
  CHECK(text.find("[train]") != std::string::npos);
  CHECK(text.find("[synth]") != std::string::npos);
  CHECK(text.find("latent = mean") != std::string::npos);

  const auto p = temp_path("roundtrip.cfg");
  write_text(p, text);
  RunConfig rc2;
  melle::cfg::load_file(rc2, p.string());
  CHECK(melle::cfg::dump(rc2) == text);
  CHECK(rc2.train.mode == LatentMode::mean);
  CHECK(rc2.synth.n_samples == 4);
  std::filesystem::remove(p);
}

TEST_CASE("MELLE_SEED seeds both commands but explicit keys win") {
  RunConfig rc;
  unsetenv("MELLE_SEED");
  melle::cfg::apply_env_seed(rc);
  CHECK(rc.train.seed == 0);
  CHECK(rc.synth.seed == 0);

  setenv("MELLE_SEED", "4242", 1);
  melle::cfg::apply_env_seed(rc);
  CHECK(rc.train.seed == 4242);
  CHECK(rc.synth.seed == 4242);

  // The CLI applies the env default first, then file keys, then flags.
  melle::cfg::set_key(rc, "train.seed", "7");
  CHECK(rc.train.seed == 7);
  CHECK(rc.synth.seed == 4242);

  setenv("MELLE_SEED", "12junk", 1);
  CHECK_THROWS_AS(melle::cfg::apply_env_seed(rc), std::invalid_argument);
  unsetenv("MELLE_SEED");
}

TEST_CASE("latent mode names") {
  CHECK(melle::cfg::parse_latent_mode("sample") == LatentMode::sample);
  CHECK(melle::cfg::parse_latent_mode("mean") == LatentMode::mean);
  CHECK_THROWS_AS(melle::cfg::parse_latent_mode("map"), std::invalid_argument);
}
