#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace melle::audio {

struct Wave {
  std::vector<float> samples;  // mono, in [-1, 1]
  std::uint32_t sample_rate = 0;
};

// Decodes a PCM/float WAV (8/16/24/32-bit int or 32-bit float, mono or
// multi-channel), averages channels, resamples to `target_rate` when given.
// Throws std::runtime_error on malformed or unsupported files.
Wave read_wav(const std::string& path, std::uint32_t target_rate = 0);

// 16-bit PCM mono. Samples are clamped to [-1, 1] before quantization.
void write_wav(const std::string& path, const std::vector<float>& samples,
               std::uint32_t sample_rate);

// Windowed-sinc (Blackman) sample-rate conversion.
std::vector<float> resample(const std::vector<float>& in, std::uint32_t from, std::uint32_t to);

}  // namespace melle::audio
