#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "melle/mel.hpp"

namespace {

using melle::Tensor;
using melle::mel::build_filterbank;
using melle::mel::extract;
using melle::mel::frame_count;
using melle::mel::MelParams;

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("melle_mel_" + name)).string();
}

std::vector<float> sine(double hz, double seconds, double amp = 1.0) {
  std::vector<float> x(static_cast<std::size_t>(seconds * 16000));
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / 16000.0));
  return x;
}

}  // namespace

TEST_SUITE("mel") {
  TEST_CASE("filterbank has the documented shape and structure") {
    const MelParams p;
    const auto fb = build_filterbank(p);
    REQUIRE(fb.shape == std::vector<std::size_t>{80, 513});

    const double bin_hz = 16000.0 / 1024.0;
    std::size_t prev_first = 0;
    for (std::size_t m = 0; m < 80; ++m) {
      bool any = false;
      std::size_t first = 513, last = 0;
      for (std::size_t k = 0; k < 513; ++k) {
        const double w = fb.at(m, k);
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
        if (w > 0.0) {
          any = true;
          first = std::min(first, k);
          last = std::max(last, k);
        }
      }
      CHECK(any);  // no empty band
      // Support is one contiguous bin run.
      for (std::size_t k = first; k <= last; ++k) CHECK(fb.at(m, k) > 0.0);
      CHECK(first >= prev_first);  // centers increase in hz
      prev_first = first;
    }
    // Bins outside [80, 7600] hz carry no weight.
    for (std::size_t k = 0; k < 513; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f <= 80.0 || f >= 7600.0)
        for (std::size_t m = 0; m < 80; ++m) CHECK(fb.at(m, k) == 0.0);
    }
  }

  TEST_CASE("band 0 matches a hand-computed triangle") {
    // Breakpoints from mel = 2595*log10(1 + f/700) between 80 and 7600 hz,
    // 82 evenly spaced points: 80.0, 103.107, 126.8985 hz. Bin spacing is
    // 15.625 hz, so only bins 6, 7, 8 fall inside.
    const auto fb = build_filterbank(MelParams{});
    for (std::size_t k = 0; k <= 5; ++k) CHECK(fb.at(0, k) == 0.0);
    CHECK(fb.at(0, 6) == doctest::Approx(0.5950577791).epsilon(1e-9));
    CHECK(fb.at(0, 7) == doctest::Approx(0.7365448879).epsilon(1e-9));
    CHECK(fb.at(0, 8) == doctest::Approx(0.0797985551).epsilon(1e-9));
    for (std::size_t k = 9; k < 513; ++k) CHECK(fb.at(0, k) == 0.0);
  }

  TEST_CASE("fmax above nyquist is rejected") {
    MelParams p;
    p.fmax = 9000.0;
    CHECK_THROWS_AS(build_filterbank(p), std::invalid_argument);
  }

  TEST_CASE("frame counts follow the centered convention") {
    const MelParams p;
    CHECK(frame_count(32000, p) == 126);   // 2 s
    CHECK(frame_count(160000, p) == 626);  // 10 s, 62.5 frames/s within one frame
    CHECK(frame_count(1024, p) == 5);
    CHECK(extract(sine(440.0, 2.0), p).shape == std::vector<std::size_t>{126, 80});
  }

  TEST_CASE("inputs shorter than one window are rejected") {
    CHECK_THROWS_AS(extract(std::vector<float>(1023, 0.1f), MelParams{}), std::invalid_argument);
  }

  TEST_CASE("silence clamps to the floor everywhere") {
    const auto m = extract(std::vector<float>(16000, 0.0f), MelParams{});
    for (float v : m.data) CHECK(v == -5.0f);
  }

  TEST_CASE("a 440 hz tone concentrates in the covering band") {
    const MelParams p;
    const auto m = extract(sine(440.0, 1.0), p);
    const auto fb = build_filterbank(p);

    std::vector<double> band_mean(80, 0.0);
    for (std::size_t t = 0; t < m.shape[0]; ++t)
      for (std::size_t b = 0; b < 80; ++b) band_mean[b] += m.at(t, b);
    for (auto& v : band_mean) v /= static_cast<double>(m.shape[0]);

    std::size_t peak = 0;
    for (std::size_t b = 1; b < 80; ++b)
      if (band_mean[b] > band_mean[peak]) peak = b;
    // 440 hz sits at the center of band 12 with this filterbank.
    CHECK(peak == 12);

    // Any band whose support starts above 1 khz trails by >= 2 log10 units.
    const double bin_hz = 16000.0 / 1024.0;
    for (std::size_t b = 0; b < 80; ++b) {
      std::size_t first = 513;
      for (std::size_t k = 0; k < 513 && first == 513; ++k)
        if (fb.at(b, k) > 0.0) first = k;
      if (static_cast<double>(first) * bin_hz >= 1000.0)
        CHECK(band_mean[peak] - band_mean[b] >= 2.0);
    }
  }

  TEST_CASE("scaling the signal by 10 shifts unclamped entries by exactly 1") {
    // Samples are quantized to 1/1024 so that both x and 10*x are exactly
    // representable floats; the remaining error is output quantization only.
    auto x = sine(440.0, 0.5, 0.09);
    for (float& v : x) v = std::round(v * 1024.0f) / 1024.0f;
    auto x10 = x;
    for (float& v : x10) v *= 10.0f;
    const auto a = extract(x, MelParams{});
    const auto b = extract(x10, MelParams{});
    std::size_t compared = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
      if (a.data[i] > -3.9f) {  // safely away from the clamp in both
        CHECK(std::abs((b.data[i] - a.data[i]) - 1.0f) < 1e-6f);
        ++compared;
      }
    CHECK(compared > 100);
  }

  TEST_CASE("extraction is deterministic") {
    const auto x = sine(523.25, 0.7, 0.3);
    const auto a = extract(x, MelParams{});
    const auto b = extract(x, MelParams{});
    CHECK(a.data == b.data);
  }

  TEST_CASE("mel files round-trip losslessly and reject corruption") {
    const auto m = extract(sine(440.0, 0.5), MelParams{});
    const std::string path = tmp_path("rt.melf");
    melle::mel::write_melf(path, m);
    const auto back = melle::mel::read_melf(path);
    CHECK(back.shape == m.shape);
    CHECK(back.data == m.data);

    const std::string bad = tmp_path("bad.melf");
    std::ofstream(bad, std::ios::binary) << "MELX0000";
    CHECK_THROWS_AS(melle::mel::read_melf(bad), std::runtime_error);

    // Header promises more frames than the payload carries.
    std::ofstream t(tmp_path("trunc.melf"), std::ios::binary);
    t.write("MELF", 4);
    const std::uint32_t v = 1, frames = 100, mels = 80;
    t.write(reinterpret_cast<const char*>(&v), 4);
    t.write(reinterpret_cast<const char*>(&frames), 4);
    t.write(reinterpret_cast<const char*>(&mels), 4);
    const float z = 0.0f;
    t.write(reinterpret_cast<const char*>(&z), 4);
    t.close();
    CHECK_THROWS_AS(melle::mel::read_melf(tmp_path("trunc.melf")), std::runtime_error);
  }
}
