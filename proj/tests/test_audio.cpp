#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "doctest.h"
#include "melle/audio.hpp"

namespace {

namespace fs = std::filesystem;
using melle::audio::read_wav;
using melle::audio::resample;
using melle::audio::write_wav;

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("melle_audio_" + name)).string();
}

void append(std::vector<char>& out, const void* p, std::size_t n) {
  const char* c = static_cast<const char*>(p);
  out.insert(out.end(), c, c + n);
}
void append_u32(std::vector<char>& out, std::uint32_t v) { append(out, &v, 4); }
void append_u16(std::vector<char>& out, std::uint16_t v) { append(out, &v, 2); }

// Assembles a wav with the given fmt chunk and raw sample payload, plus an
// optional junk chunk before the data to exercise chunk skipping.
std::string craft_wav(const std::string& name, std::uint16_t fmt, std::uint16_t channels,
                      std::uint32_t rate, std::uint16_t bits, const std::vector<char>& payload,
                      bool extensible = false, bool junk_chunk = false) {
  std::vector<char> b;
  append(b, "RIFF", 4);
  append_u32(b, 0);  // patched below
  append(b, "WAVE", 4);
  append(b, "fmt ", 4);
  append_u32(b, extensible ? 40 : 16);
  append_u16(b, extensible ? 0xFFFE : fmt);
  append_u16(b, channels);
  append_u32(b, rate);
  append_u32(b, rate * channels * bits / 8);
  append_u16(b, static_cast<std::uint16_t>(channels * bits / 8));
  append_u16(b, bits);
  if (extensible) {
    append_u16(b, 22);
    append_u16(b, bits);
    append_u32(b, 0);
    append_u16(b, fmt);  // subformat guid, leading bytes
    const char guid_rest[14] = {0, 0, 0, 0, 0x10, 0, static_cast<char>(0x80), 0, 0,
                                static_cast<char>(0xAA), 0, 0x38, static_cast<char>(0x9B), 0x71};
    append(b, guid_rest, 14);
  }
  if (junk_chunk) {
    append(b, "LIST", 4);
    append_u32(b, 6);
    append(b, "junk!!", 6);
  }
  append(b, "data", 4);
  append_u32(b, static_cast<std::uint32_t>(payload.size()));
  append(b, payload.data(), payload.size());
  const auto riff_size = static_cast<std::uint32_t>(b.size() - 8);
  std::memcpy(b.data() + 4, &riff_size, 4);

  const std::string path = tmp_path(name);
  std::ofstream f(path, std::ios::binary);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
  return path;
}

std::vector<float> sine(double hz, std::uint32_t rate, double seconds, double amp = 0.5) {
  std::vector<float> x(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  return x;
}

}  // namespace

TEST_SUITE("audio") {
  TEST_CASE("16-bit write/read round trip is quantization-accurate") {
    const auto x = sine(440.0, 16000, 0.25);
    const std::string path = tmp_path("rt.wav");
    write_wav(path, x, 16000);
    const auto w = read_wav(path);
    CHECK(w.sample_rate == 16000);
    REQUIRE(w.samples.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(std::abs(w.samples[i] - x[i]) < 1e-4f);
  }

  TEST_CASE("one second of silence at 16 khz loads as 16000 zeros") {
    const std::string path = tmp_path("silence.wav");
    write_wav(path, std::vector<float>(16000, 0.0f), 16000);
    const auto w = read_wav(path, 16000);
    CHECK(w.samples.size() == 16000);
    for (float s : w.samples) CHECK(s == 0.0f);
  }

  TEST_CASE("a one-second 48 khz file ingests as 16000 samples") {
    const std::string path = tmp_path("48k.wav");
    write_wav(path, sine(440.0, 48000, 1.0), 48000);
    const auto w = read_wav(path, 16000);
    CHECK(w.sample_rate == 16000);
    CHECK(w.samples.size() == 16000);
  }

  TEST_CASE("identical stereo channels collapse to either channel") {
    std::vector<char> payload;
    const std::vector<std::int16_t> mono = {1000, -2000, 3000, 0, -32768, 32767};
    for (std::int16_t v : mono) {
      append(payload, &v, 2);
      append(payload, &v, 2);
    }
    const auto path = craft_wav("stereo.wav", 1, 2, 16000, 16, payload);
    const auto w = read_wav(path);
    REQUIRE(w.samples.size() == mono.size());
    for (std::size_t i = 0; i < mono.size(); ++i)
      CHECK(w.samples[i] == doctest::Approx(mono[i] / 32768.0f));
  }

  TEST_CASE("8-bit unsigned samples decode around the 128 midpoint") {
    const std::vector<char> payload = {static_cast<char>(128), static_cast<char>(255), 0};
    const auto w = read_wav(craft_wav("u8.wav", 1, 1, 16000, 8, payload));
    REQUIRE(w.samples.size() == 3);
    CHECK(w.samples[0] == 0.0f);
    CHECK(w.samples[1] == doctest::Approx(127.0 / 128.0));
    CHECK(w.samples[2] == -1.0f);
  }

  TEST_CASE("24-bit samples decode with sign extension") {
    std::vector<char> payload = {static_cast<char>(0xFF), static_cast<char>(0xFF), 0x7F,
                                 0x00,                    0x00,                    static_cast<char>(0x80)};
    const auto w = read_wav(craft_wav("s24.wav", 1, 1, 16000, 24, payload));
    REQUIRE(w.samples.size() == 2);
    CHECK(w.samples[0] == doctest::Approx(8388607.0 / 8388608.0));
    CHECK(w.samples[1] == -1.0f);
  }

  TEST_CASE("32-bit float samples pass through") {
    std::vector<char> payload;
    const float vals[2] = {0.25f, -0.5f};
    append(payload, vals, 8);
    const auto w = read_wav(craft_wav("f32.wav", 3, 1, 16000, 32, payload));
    REQUIRE(w.samples.size() == 2);
    CHECK(w.samples[0] == 0.25f);
    CHECK(w.samples[1] == -0.5f);
  }

  TEST_CASE("extensible headers and junk chunks are handled") {
    std::vector<char> payload;
    const std::int16_t v = 12345;
    append(payload, &v, 2);
    const auto w =
        read_wav(craft_wav("ext.wav", 1, 1, 22050, 16, payload, /*extensible=*/true,
                           /*junk_chunk=*/true));
    REQUIRE(w.samples.size() == 1);
    CHECK(w.samples[0] == doctest::Approx(12345 / 32768.0f));
  }

  TEST_CASE("malformed files are rejected with errors") {
    const std::string garbage = tmp_path("garbage.wav");
    std::ofstream(garbage, std::ios::binary) << "MP3 data, honest";
    CHECK_THROWS_AS(read_wav(garbage), std::runtime_error);

    const std::string missing = tmp_path("missing_subdir") + "/nope.wav";
    CHECK_THROWS_AS(read_wav(missing), std::runtime_error);

    // fmt chunk present but no data chunk.
    std::vector<char> b;
    append(b, "RIFF", 4);
    append_u32(b, 20);
    append(b, "WAVE", 4);
    append(b, "fmt ", 4);
    append_u32(b, 16);
    b.resize(b.size() + 16, 0);
    const std::string nodata = tmp_path("nodata.wav");
    std::ofstream(nodata, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
    CHECK_THROWS_AS(read_wav(nodata), std::runtime_error);
  }

  TEST_CASE("resampling doubles a sine faithfully away from the edges") {
    const auto in = sine(440.0, 8000, 0.5);
    const auto out = resample(in, 8000, 16000);
    REQUIRE(out.size() == 8000);
    const auto expect = sine(440.0, 16000, 0.5);
    for (std::size_t i = 200; i + 200 < out.size(); ++i)
      CHECK(std::abs(out[i] - expect[i]) < 2e-3f);
  }

  TEST_CASE("resampling preserves dc level") {
    const std::vector<float> in(4410, 0.7f);
    const auto out = resample(in, 44100, 16000);
    REQUIRE(out.size() == 1600);
    for (std::size_t i = 100; i + 100 < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(0.7f).epsilon(1e-3));
  }

  TEST_CASE("resampling to the same rate is the identity") {
    const auto in = sine(100.0, 16000, 0.1);
    CHECK(resample(in, 16000, 16000) == in);
  }
}
