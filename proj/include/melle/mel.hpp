#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "melle/tensor.hpp"

namespace melle::mel {

struct MelParams {
  std::uint32_t sample_rate = 16000;
  std::size_t n_fft = 1024;
  std::size_t win_length = 1024;
  std::size_t hop = 256;
  std::size_t n_mels = 80;
  double fmin = 80.0;
  double fmax = 7600.0;
  double floor = 1e-5;  // linear clamp before log10, so entries are >= -5
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters (peak 1) with centers uniform on the mel scale,
// n_mels × (n_fft/2 + 1).
Tensor<double> build_filterbank(const MelParams& p);

// Frames under the zero-centered convention: 1 + floor(N / hop).
std::size_t frame_count(std::size_t n_samples, const MelParams& p);

// Magnitude STFT, T × (n_fft/2+1), periodic Hann, signal zero-padded by
// n_fft/2 on both sides. Requires at least one window of samples.
Tensor<double> magnitude_stft(const std::vector<float>& samples, const MelParams& p);

// Full pipeline: magnitude STFT → filterbank → clamp at floor → log10.
Tensor<float> extract(const std::vector<float>& samples, const MelParams& p);

// Flat binary mel features: "MELF", u32 version=1, u32 T, u32 n_mels,
// float32 row-major little-endian.
void write_melf(const std::string& path, const Tensor<float>& mel);
Tensor<float> read_melf(const std::string& path);

}  // namespace melle::mel
