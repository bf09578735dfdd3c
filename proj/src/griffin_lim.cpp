#include "melle/griffin_lim.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include "melle/fft.hpp"
#include "melle/kernels.hpp"

namespace melle::gl {

namespace {

// In-place lower Cholesky of a symmetric positive-definite matrix.
void cholesky(Tensor<double>& a) {
  const std::size_t n = a.shape.at(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
        a.at(i, i) = std::sqrt(s);
      } else {
        a.at(i, j) = s / a.at(j, j);
        a.at(j, i) = 0.0;
      }
    }
  }
}

// Solves L L^T x = b given the lower factor.
void cholesky_solve(const Tensor<double>& l, std::vector<double>& b) {
  const std::size_t n = l.shape[0];
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * b[k];
    b[i] = s / l.at(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l.at(k, i) * b[k];
    b[i] = s / l.at(i, i);
  }
}

std::vector<double> stft_window(const mel::MelParams& p) {
  std::vector<double> window(p.n_fft, 0.0);
  const std::size_t off = (p.n_fft - p.win_length) / 2;
  for (std::size_t i = 0; i < p.win_length; ++i)
    window[off + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                           static_cast<double>(p.win_length));
  return window;
}

using Spectra = std::vector<std::vector<std::complex<double>>>;

// Overlap-add synthesis normalized by the summed squared window.
std::vector<double> istft(const Spectra& spec, const std::vector<double>& window,
                          const mel::MelParams& p) {
  const std::size_t frames = spec.size();
  const std::size_t len = (frames - 1) * p.hop + p.n_fft;
  std::vector<double> y(len, 0.0), wsum(len, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::vector<double> frame = dsp::irfft(spec[t], p.n_fft);
    const std::size_t base = t * p.hop;
    for (std::size_t i = 0; i < p.n_fft; ++i) {
      y[base + i] += frame[i] * window[i];
      wsum[base + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < len; ++i)
    if (wsum[i] > 1e-10) y[i] /= wsum[i];
  return y;
}

Spectra stft(const std::vector<double>& y, const std::vector<double>& window, std::size_t frames,
             const mel::MelParams& p) {
  Spectra spec(frames);
  std::vector<double> buf(p.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = y.data() + t * p.hop;
    for (std::size_t i = 0; i < p.n_fft; ++i) buf[i] = src[i] * window[i];
    spec[t] = dsp::rfft(buf);
  }
  return spec;
}

}  // namespace

Tensor<double> mel_to_linear(const Tensor<float>& logmel, const Tensor<double>& filterbank,
                             const mel::MelParams& p) {
  if (logmel.ndim() != 2 || logmel.shape[1] != p.n_mels)
    throw std::invalid_argument("mel_to_linear: width must be n_mels");
  const std::size_t frames = logmel.shape[0];
  const std::size_t bins = filterbank.shape.at(1);

  // gram = FB FB^T + ridge, factored once and reused for every frame.
  Tensor<double> gram({p.n_mels, p.n_mels});
  kern::gemm(false, true, p.n_mels, p.n_mels, bins, 1.0, filterbank.data.data(), bins,
             filterbank.data.data(), bins, 0.0, gram.data.data(), p.n_mels);
  for (std::size_t i = 0; i < p.n_mels; ++i) gram.at(i, i) += 1e-8;
  cholesky(gram);

  Tensor<double> mag({frames, bins});
  std::vector<double> rhs(p.n_mels);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < p.n_mels; ++m)
      rhs[m] = std::pow(10.0, static_cast<double>(logmel.at(t, m)));
    cholesky_solve(gram, rhs);
    for (std::size_t k = 0; k < bins; ++k) {
      double s = 0.0;
      for (std::size_t m = 0; m < p.n_mels; ++m) s += filterbank.at(m, k) * rhs[m];
      mag.at(t, k) = std::max(s, 0.0);
    }
  }
  return mag;
}

std::vector<float> reconstruct(const Tensor<double>& magnitude, const mel::MelParams& p,
                               std::size_t iterations) {
  if (iterations == 0) throw std::invalid_argument("griffin-lim: need at least one iteration");
  const std::size_t frames = magnitude.shape.at(0);
  const std::size_t bins = magnitude.shape.at(1);
  if (bins != p.n_fft / 2 + 1) throw std::invalid_argument("griffin-lim: bin count mismatch");
  const std::vector<double> window = stft_window(p);

  Spectra spec(frames, std::vector<std::complex<double>>(bins));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < bins; ++k) spec[t][k] = magnitude.at(t, k);  // zero phase

  std::vector<double> y;
  for (std::size_t it = 0; it < iterations; ++it) {
    y = istft(spec, window, p);
    const Spectra est = stft(y, window, frames, p);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < bins; ++k) {
        const double norm = std::abs(est[t][k]);
        spec[t][k] = norm > 1e-12 ? est[t][k] * (magnitude.at(t, k) / norm)
                                  : std::complex<double>(magnitude.at(t, k), 0.0);
      }
  }
  y = istft(spec, window, p);

  const std::size_t pad = p.n_fft / 2;
  const std::size_t out_len = (frames - 1) * p.hop;
  std::vector<float> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = static_cast<float>(y[pad + i]);
  return out;
}

std::vector<float> mel_to_audio(const Tensor<float>& logmel, const mel::MelParams& p,
                                std::size_t iterations) {
  const Tensor<double> fb = mel::build_filterbank(p);
  return reconstruct(mel_to_linear(logmel, fb, p), p, iterations);
}

}  // namespace melle::gl
