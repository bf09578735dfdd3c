#include "melle/mel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "melle/fft.hpp"
#include "melle/kernels.hpp"

namespace melle::mel {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<double> build_filterbank(const MelParams& p) {
  if (!(p.fmin < p.fmax)) throw std::invalid_argument("filterbank: fmin must be below fmax");
  if (p.fmax > p.sample_rate / 2.0)
    throw std::invalid_argument("filterbank: fmax above nyquist");
  const std::size_t bins = p.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(p.fmin), mel_hi = hz_to_mel(p.fmax);
  std::vector<double> edges(p.n_mels + 2);  // hz breakpoints, band k spans edges[k..k+2]
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(p.n_mels + 1));
  Tensor<double> fb({p.n_mels, bins});
  const double bin_hz = static_cast<double>(p.sample_rate) / static_cast<double>(p.n_fft);
  for (std::size_t m = 0; m < p.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f == mid)
        w = 1.0;
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.at(m, k) = w;
    }
  }
  return fb;
}

std::size_t frame_count(std::size_t n_samples, const MelParams& p) {
  return 1 + n_samples / p.hop;
}

Tensor<double> magnitude_stft(const std::vector<float>& samples, const MelParams& p) {
  if (samples.size() < p.win_length)
    throw std::invalid_argument("stft: signal shorter than one window");
  if (p.win_length > p.n_fft) throw std::invalid_argument("stft: window longer than fft");
  if (!dsp::is_pow2(p.n_fft)) throw std::invalid_argument("stft: fft size must be a power of two");

  // Periodic Hann, zero-padded symmetrically when win_length < n_fft.
  std::vector<double> window(p.n_fft, 0.0);
  const std::size_t off = (p.n_fft - p.win_length) / 2;
  for (std::size_t i = 0; i < p.win_length; ++i)
    window[off + i] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                             static_cast<double>(p.win_length));

  const std::size_t pad = p.n_fft / 2;
  std::vector<double> padded(samples.size() + 2 * pad, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) padded[pad + i] = samples[i];

  const std::size_t frames = frame_count(samples.size(), p);
  const std::size_t bins = p.n_fft / 2 + 1;
  Tensor<double> mag({frames, bins});
  std::vector<double> buf(p.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = padded.data() + t * p.hop;
    for (std::size_t i = 0; i < p.n_fft; ++i) buf[i] = src[i] * window[i];
    const auto spec = dsp::rfft(buf);
    for (std::size_t k = 0; k < bins; ++k) mag.at(t, k) = std::abs(spec[k]);
  }
  return mag;
}

Tensor<float> extract(const std::vector<float>& samples, const MelParams& p) {
  const Tensor<double> mag = magnitude_stft(samples, p);
  const Tensor<double> fb = build_filterbank(p);
  const std::size_t frames = mag.shape[0], bins = mag.shape[1];
  Tensor<double> mel({frames, p.n_mels});
  kern::gemm(false, true, frames, p.n_mels, bins, 1.0, mag.data.data(), bins, fb.data.data(),
             bins, 0.0, mel.data.data(), p.n_mels);
  Tensor<float> out({frames, p.n_mels});
  for (std::size_t i = 0; i < mel.numel(); ++i)
    out.data[i] = static_cast<float>(std::log10(std::max(mel.data[i], p.floor)));
  return out;
}

void write_melf(const std::string& path, const Tensor<float>& mel) {
  if (mel.ndim() != 2) throw std::invalid_argument("melf: need a T×n_mels matrix");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write mel file: " + path);
  const std::uint32_t version = 1;
  const auto frames = static_cast<std::uint32_t>(mel.shape[0]);
  const auto n_mels = static_cast<std::uint32_t>(mel.shape[1]);
  f.write("MELF", 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&frames), 4);
  f.write(reinterpret_cast<const char*>(&n_mels), 4);
  f.write(reinterpret_cast<const char*>(mel.data.data()),
          static_cast<std::streamsize>(mel.numel() * sizeof(float)));
  if (!f) throw std::runtime_error("short write: " + path);
}

Tensor<float> read_melf(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open mel file: " + path);
  char magic[4];
  std::uint32_t version = 0, frames = 0, n_mels = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&frames), 4);
  f.read(reinterpret_cast<char*>(&n_mels), 4);
  if (!f || std::memcmp(magic, "MELF", 4) != 0)
    throw std::runtime_error("not a mel feature file: " + path);
  if (version != 1)
    throw std::runtime_error("unsupported mel file version " + std::to_string(version) + ": " +
                             path);
  Tensor<float> mel({frames, n_mels});
  f.read(reinterpret_cast<char*>(mel.data.data()),
         static_cast<std::streamsize>(mel.numel() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated mel file: " + path);
  return mel;
}

}  // namespace melle::mel
