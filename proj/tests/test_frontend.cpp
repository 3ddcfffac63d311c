#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "amaut/frontend.hpp"
#include "amaut/rng.hpp"

using namespace amaut;

namespace {

AudioClip random_clip(std::size_t n, std::uint32_t rate, std::uint64_t seed) {
  RngStream rng(seed);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.channels = 1;
  clip.samples.resize(n);
  for (auto& s : clip.samples) s = static_cast<float>(rng.uniform(-0.9, 0.9));
  return clip;
}

// Reference spectrogram built from the definition: per-frame periodic Hann
// window, naive direct DFT, one-sided power, triangular mel weights, log.
// Shares no transform code with the implementation under test.
Tensord reference_mel(const AudioClip& clip, const MelParams& p) {
  const std::size_t win = p.win_samples(clip.sample_rate);
  const std::size_t hop = p.hop_samples(clip.sample_rate);
  const std::size_t frames = mel_frame_count(clip.samples.size(), win, hop);
  std::size_t nfft = 1;
  while (nfft < win) nfft *= 2;
  const std::size_t bins = nfft / 2 + 1;
  const double fmax = p.f_max > 0.0 ? p.f_max : clip.sample_rate / 2.0;

  const auto fb = mel_filterbank(p.n_mels, nfft, clip.sample_rate, p.f_min, fmax);
  Tensord out({p.n_mels, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> power(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t i = 0; i < win; ++i) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / win));
        const double x = w * clip.samples[t * hop + i];
        const double ang = -2.0 * M_PI * static_cast<double>(b) * i / nfft;
        acc += x * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      power[b] = std::norm(acc);
    }
    for (std::size_t m = 0; m < p.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t b = 0; b < bins; ++b) acc += fb[m][b] * power[b];
      out.at(m, t) = std::log(acc + p.log_floor);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("mel scale round trips and hits the published anchor") {
  CHECK(hz_to_mel(0.0) == doctest::Approx(0.0));
  // 1000 Hz maps near 1000 mel on this scale.
  CHECK(hz_to_mel(1000.0) == doctest::Approx(999.99).epsilon(1e-3));
  for (double f : {50.0, 440.0, 4000.0, 7999.0})
    CHECK(mel_to_hz(hz_to_mel(f)) == doctest::Approx(f).epsilon(1e-9));
}

TEST_CASE("frame count formula") {
  // 1 s at 16 kHz, 25 ms window (400), 10 ms hop (160): T = 1 + (16000-400)/160.
  CHECK(mel_frame_count(16000, 400, 160) == 98);
  CHECK(mel_frame_count(400, 400, 160) == 1);
  CHECK(mel_frame_count(399, 400, 160) == 0);
  CHECK(mel_frame_count(560, 400, 160) == 2);

  MelParams p;
  CHECK(p.win_samples(16000) == 400);
  CHECK(p.hop_samples(16000) == 160);
  CHECK(p.win_samples(44100) == 1103);
  CHECK(fft_size_for(400) == 512);
  CHECK(fft_size_for(512) == 512);
  CHECK(fft_size_for(1103) == 2048);

  AudioClip clip = random_clip(16000, 16000, 1);
  MelParams params;
  params.n_mels = 32;
  TokenMatrix m = mel_spectrogram(clip, params);
  CHECK(m.n_frames() == 98);
  CHECK(m.n_mels() == 32);
}

TEST_CASE("spectrogram matches the direct-DFT reference") {
  MelParams p;
  p.n_mels = 24;
  for (auto [rate, n] : {std::pair<std::uint32_t, std::size_t>{16000, 8000},
                         {8000, 4400}}) {
    AudioClip clip = random_clip(n, rate, 7 + rate);
    TokenMatrix got = mel_spectrogram(clip, p);
    Tensord want = reference_mel(clip, p);
    REQUIRE(got.values.shape() == want.shape());
    double worst = 0;
    for (std::size_t i = 0; i < want.numel(); ++i)
      worst = std::max(worst, std::abs(got.values[i] - want[i]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("all-zero input hits the log floor everywhere") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.channels = 1;
  clip.samples.assign(16000, 0.0f);
  MelParams p;
  p.n_mels = 16;
  TokenMatrix m = mel_spectrogram(clip, p);
  const double expect = std::log(p.log_floor);
  for (std::size_t i = 0; i < m.values.numel(); ++i)
    CHECK(m.values[i] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("doubling the hop roughly halves the frame count") {
  AudioClip clip = random_clip(32000, 16000, 11);
  MelParams p;
  p.n_mels = 16;
  const std::size_t t1 = mel_spectrogram(clip, p).n_frames();
  p.hop_ms = 20.0;
  const std::size_t t2 = mel_spectrogram(clip, p).n_frames();
  CHECK(t1 == 198);
  CHECK(t2 == 99);
}

TEST_CASE("filterbank rows are triangular, non-negative, correctly supported") {
  const std::size_t nfft = 512;
  const auto fb = mel_filterbank(20, nfft, 16000, 0.0, 8000.0);
  REQUIRE(fb.size() == 20);
  for (const auto& row : fb) {
    REQUIRE(row.size() == nfft / 2 + 1);
    double peak = 0;
    std::size_t first = row.size(), last = 0;
    for (std::size_t b = 0; b < row.size(); ++b) {
      CHECK(row[b] >= 0.0);
      CHECK(row[b] <= 1.0 + 1e-12);
      peak = std::max(peak, row[b]);
      if (row[b] > 0) {
        first = std::min(first, b);
        last = b;
      }
    }
    CHECK(peak > 0.0);
    // Support is contiguous: no interior zeros.
    for (std::size_t b = first; b <= last; ++b) CHECK(row[b] > 0.0);
  }

  // Peak bins march strictly up the spectrum with the band index.
  std::size_t prev_peak = 0;
  for (std::size_t m = 0; m < fb.size(); ++m) {
    std::size_t argmax = 0;
    for (std::size_t b = 1; b < fb[m].size(); ++b)
      if (fb[m][b] > fb[m][argmax]) argmax = b;
    if (m > 0) CHECK(argmax > prev_peak);
    prev_peak = argmax;
  }
}

TEST_CASE("too-short and non-mono inputs are rejected") {
  MelParams p;
  AudioClip stub = random_clip(100, 16000, 3);
  CHECK_THROWS_AS(mel_spectrogram(stub, p), TooShortError);

  AudioClip stereo = random_clip(32000, 16000, 5);
  stereo.channels = 2;
  CHECK_THROWS_AS(mel_spectrogram(stereo, p), std::invalid_argument);

  MelParams bad;
  bad.hop_ms = 30.0;  // hop > window
  AudioClip ok = random_clip(16000, 16000, 9);
  CHECK_THROWS_AS(mel_spectrogram(ok, bad), std::invalid_argument);
  bad = MelParams{};
  bad.f_max = 9000.0;  // above nyquist for 16 kHz
  CHECK_THROWS_AS(mel_spectrogram(ok, bad), std::invalid_argument);
}

TEST_CASE("tokenisation shares storage bit for bit") {
  AudioClip clip = random_clip(16000, 16000, 13);
  MelParams p;
  p.n_mels = 16;
  TokenMatrix m = mel_spectrogram(clip, p);
  TokenSequence seq = horizontal_tokenize(m);
  CHECK(seq.channels() == 16);
  CHECK(seq.length() == m.n_frames());
  CHECK(seq.values.vec() == m.values.vec());
}

TEST_CASE("a pure tone lights up the matching mel band") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.channels = 1;
  clip.samples.resize(16000);
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    clip.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * M_PI * 440.0 * i / 16000));
  MelParams p;
  p.n_mels = 40;
  TokenMatrix m = mel_spectrogram(clip, p);

  // Which band should peak: the one whose filter best covers 440 Hz.
  const std::size_t nfft = fft_size_for(p.win_samples(16000));
  const auto fb = mel_filterbank(40, nfft, 16000, 0.0, 8000.0);
  const double bin_hz = 16000.0 / nfft;
  std::size_t expect_band = 0;
  double best_w = -1;
  for (std::size_t band = 0; band < 40; ++band) {
    const double w = fb[band][static_cast<std::size_t>(std::lround(440.0 / bin_hz))];
    if (w > best_w) {
      best_w = w;
      expect_band = band;
    }
  }
  for (std::size_t t = 0; t < m.n_frames(); t += 7) {
    std::size_t argmax = 0;
    for (std::size_t band = 1; band < 40; ++band)
      if (m.values.at(band, t) > m.values.at(argmax, t)) argmax = band;
    CHECK(std::abs(static_cast<int>(argmax) - static_cast<int>(expect_band)) <= 1);
  }
}
