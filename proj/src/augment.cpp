#include "amaut/augment.hpp"

#include <algorithm>
#include <cmath>

namespace amaut {
namespace {

double mean_power(const std::vector<float>& v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return v.empty() ? 0.0 : acc / v.size();
}

double peak(const std::vector<float>& v) {
  double p = 0.0;
  for (float x : v) p = std::max(p, std::abs(static_cast<double>(x)));
  return p;
}

}  // namespace

AudioClip time_shift(const AudioClip& clip, double frac, ShiftDirection direction) {
  if (frac < 0.0 || frac > 1.0)
    throw std::invalid_argument("time_shift: frac must lie in [0, 1]");
  const std::size_t n = clip.samples.size();
  const std::size_t shift = static_cast<std::size_t>(std::lround(frac * n));
  if (shift == 0) return clip;
  AudioClip out = clip;
  std::fill(out.samples.begin(), out.samples.end(), 0.0f);
  if (shift >= n) return out;
  if (direction == ShiftDirection::kRight) {
    for (std::size_t j = 0; j + shift < n; ++j) out.samples[j + shift] = clip.samples[j];
  } else {
    for (std::size_t j = shift; j < n; ++j) out.samples[j - shift] = clip.samples[j];
  }
  return out;
}

AudioClip gaussian_noise(const AudioClip& clip, double ratio, RngStream& rng) {
  if (ratio < 0.0) throw std::invalid_argument("gaussian_noise: ratio must be >= 0");
  if (ratio == 0.0) return clip;
  const double sigma = ratio * std::max(peak(clip.samples), 1e-6);
  AudioClip out = clip;
  for (auto& v : out.samples) v = static_cast<float>(v + sigma * rng.normal());
  return out;
}

AudioClip background_mix(const AudioClip& clip, const AudioClip& noise, double snr_db,
                         RngStream& rng) {
  if (noise.sample_rate != clip.sample_rate)
    throw AugmentError("background_mix: sample rate mismatch");
  if (noise.samples.empty() || mean_power(noise.samples) == 0.0)
    throw AugmentError("background_mix: degenerate noise clip (zero power)");
  const double p_signal = mean_power(clip.samples);
  if (p_signal == 0.0) return clip;  // silent input: nothing to scale against

  const std::size_t n = clip.samples.size();
  // Random segment start; the noise is tiled when shorter than the clip.
  const std::size_t start = rng.uniform_index(noise.samples.size());
  std::vector<float> segment(n);
  for (std::size_t i = 0; i < n; ++i)
    segment[i] = noise.samples[(start + i) % noise.samples.size()];

  const double p_noise = mean_power(segment);
  const double target = p_signal * std::pow(10.0, -snr_db / 10.0);
  const double scale = std::sqrt(target / p_noise);
  AudioClip out = clip;
  for (std::size_t i = 0; i < n; ++i)
    out.samples[i] = static_cast<float>(out.samples[i] + scale * segment[i]);
  return out;
}

ViewSet make_view_set(const AudioClip& clip, ViewRecipe recipe, RngStream& rng,
                      const std::vector<AudioClip>& noise_bank) {
  ViewSet set;
  set.recipe = recipe;
  switch (recipe) {
    case ViewRecipe::kTrain4: {
      if (noise_bank.size() < 2)
        throw AugmentError("make_view_set: train4 needs a noise bank of >= 2 clips");
      const ShiftDirection dir =
          rng.uniform() < 0.5 ? ShiftDirection::kLeft : ShiftDirection::kRight;
      set.views.push_back(time_shift(clip, rng.uniform(0.0, kMaxShiftFrac), dir));
      set.views.push_back(gaussian_noise(clip, kDefaultNoiseRatio, rng));
      set.views.push_back(background_mix(clip, noise_bank[0], kDefaultSnrDb, rng));
      set.views.push_back(background_mix(clip, noise_bank[1], kDefaultSnrDb, rng));
      break;
    }
    case ViewRecipe::kTrain1:
      set.views.push_back(clip);
      break;
    case ViewRecipe::kTtda2:
    case ViewRecipe::kTtau2:
      set.views.push_back(
          time_shift(clip, rng.uniform(0.0, kMaxShiftFrac), ShiftDirection::kRight));
      set.views.push_back(
          time_shift(clip, rng.uniform(0.0, kMaxShiftFrac), ShiftDirection::kLeft));
      break;
  }
  return set;
}

}  // namespace amaut
