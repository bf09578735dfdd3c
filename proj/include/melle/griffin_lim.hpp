#pragma once

#include <vector>

#include "melle/mel.hpp"
#include "melle/tensor.hpp"

namespace melle::gl {

// Undo the log10 and map mel energies back to linear FFT magnitudes through
// the regularized least-squares inverse of the filterbank, clamped at 0.
Tensor<double> mel_to_linear(const Tensor<float>& logmel, const Tensor<double>& filterbank,
                             const mel::MelParams& p);

// Classic alternating-projection phase recovery from a magnitude
// spectrogram. Phase starts at zero, so the result is deterministic.
// Output length is (T-1)*hop samples.
std::vector<float> reconstruct(const Tensor<double>& magnitude, const mel::MelParams& p,
                               std::size_t iterations);

std::vector<float> mel_to_audio(const Tensor<float>& logmel, const mel::MelParams& p,
                                std::size_t iterations);

}  // namespace melle::gl
