#include "amaut/frontend.hpp"

#include <cmath>
#include <complex>

namespace amaut {
namespace {

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace

void MelParams::validate(std::uint32_t sample_rate) const {
  if (n_mels < 8) throw std::invalid_argument("mel: n_mels must be >= 8");
  if (hop_ms > win_ms) throw std::invalid_argument("mel: hop must not exceed window");
  const double fmax = f_max > 0.0 ? f_max : sample_rate / 2.0;
  if (!(f_min < fmax) || fmax > sample_rate / 2.0)
    throw std::invalid_argument("mel: need f_min < f_max <= sample_rate/2");
}

std::size_t MelParams::win_samples(std::uint32_t sample_rate) const {
  return static_cast<std::size_t>(std::lround(win_ms * 1e-3 * sample_rate));
}

std::size_t MelParams::hop_samples(std::uint32_t sample_rate) const {
  return static_cast<std::size_t>(std::lround(hop_ms * 1e-3 * sample_rate));
}

std::size_t mel_frame_count(std::size_t n_samples, std::size_t win, std::size_t hop) {
  if (n_samples < win) return 0;
  return 1 + (n_samples - win) / hop;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t fft_size_for(std::size_t win_samples) {
  std::size_t n = 1;
  while (n < win_samples) n <<= 1;
  return n;
}

std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t nfft,
                                                std::uint32_t sample_rate, double f_min,
                                                double f_max) {
  const std::size_t bins = nfft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / nfft;
      if (f <= lo || f >= hi) continue;
      fb[m][b] = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

TokenMatrix mel_spectrogram(const AudioClip& clip, const MelParams& params) {
  if (clip.channels != 1)
    throw std::invalid_argument("mel: clip must be mono (run stereo_to_mono first)");
  params.validate(clip.sample_rate);
  const std::size_t win = params.win_samples(clip.sample_rate);
  const std::size_t hop = params.hop_samples(clip.sample_rate);
  const std::size_t n = clip.samples.size();
  if (n < win)
    throw TooShortError("mel: clip of " + std::to_string(n) +
                        " samples is shorter than one window (" + std::to_string(win) +
                        " samples)");
  const std::size_t frames = mel_frame_count(n, win, hop);
  const std::size_t nfft = fft_size_for(win);
  const std::size_t bins = nfft / 2 + 1;
  const double fmax = params.f_max > 0.0 ? params.f_max : clip.sample_rate / 2.0;
  const auto fb = mel_filterbank(params.n_mels, nfft, clip.sample_rate, params.f_min, fmax);

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / win));

  TokenMatrix out;
  out.params = params;
  out.source_rate = clip.sample_rate;
  out.values = Tensord({params.n_mels, frames});

  // Each filter has contiguous support; restrict the inner loop to it.
  std::vector<std::pair<std::size_t, std::size_t>> support(params.n_mels, {bins, bins});
  for (std::size_t m = 0; m < params.n_mels; ++m) {
    std::size_t lo = bins, hi = 0;
    for (std::size_t b = 0; b < bins; ++b)
      if (fb[m][b] != 0.0) {
        lo = std::min(lo, b);
        hi = b + 1;
      }
    support[m] = {lo, hi};
  }

  std::vector<std::complex<double>> frame(nfft);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < nfft; ++i)
      frame[i] = i < win
                     ? std::complex<double>(window[i] * clip.samples[t * hop + i], 0.0)
                     : std::complex<double>(0.0, 0.0);
    fft(frame);
    for (std::size_t b = 0; b < bins; ++b) power[b] = std::norm(frame[b]);
    for (std::size_t m = 0; m < params.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t b = support[m].first; b < support[m].second; ++b)
        acc += fb[m][b] * power[b];
      out.values.at(m, t) = std::log(acc + params.log_floor);
    }
  }
  return out;
}

TokenSequence horizontal_tokenize(const TokenMatrix& spec) {
  return TokenSequence{spec.values};
}

}  // namespace amaut
