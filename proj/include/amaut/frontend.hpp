#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "amaut/audio.hpp"
#include "amaut/tensor.hpp"

namespace amaut {

struct MelParams {
  std::size_t n_mels = 128;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 means sample_rate / 2
  double log_floor = 1e-10;

  void validate(std::uint32_t sample_rate) const;
  std::size_t win_samples(std::uint32_t sample_rate) const;
  std::size_t hop_samples(std::uint32_t sample_rate) const;
};

// T = 1 + floor((N - win) / hop) for N >= win.
std::size_t mel_frame_count(std::size_t n_samples, std::size_t win, std::size_t hop);

// Log-Mel spectrogram, F x T. Values are kept in double so downstream
// verification against the direct-DFT reference is not limited by storage
// precision; the model casts on ingestion.
struct TokenMatrix {
  Tensord values;  // (F, T)
  MelParams params;
  std::uint32_t source_rate = 0;

  std::size_t n_mels() const { return values.extent(0); }
  std::size_t n_frames() const { return values.extent(1); }
};

class TooShortError : public std::runtime_error {
 public:
  explicit TooShortError(const std::string& what) : std::runtime_error(what) {}
};

// HTK mel scale: m = 2595 * log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filterbank rows over the nfft/2+1 one-sided power bins.
std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t nfft,
                                                std::uint32_t sample_rate, double f_min,
                                                double f_max);

// FFT length: next power of two >= win_samples (frames are zero padded).
std::size_t fft_size_for(std::size_t win_samples);

// Periodic Hann window, power spectrum, HTK mel filterbank, natural log with
// an additive floor. Mono input only.
TokenMatrix mel_spectrogram(const AudioClip& clip, const MelParams& params);

// Contract-only reinterpretation of the F x T matrix as T tokens of F
// channels. Storage is shared with the source matrix bit for bit.
struct TokenSequence {
  Tensord values;  // identical storage layout, still (F, T)
  std::size_t length() const { return values.extent(1); }
  std::size_t channels() const { return values.extent(0); }
};

TokenSequence horizontal_tokenize(const TokenMatrix& spec);

}  // namespace amaut
