#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "amaut/audio.hpp"
#include "amaut/rng.hpp"

namespace amaut {

enum class ShiftDirection { kLeft, kRight };

enum class ViewRecipe { kTrain4, kTrain1, kTtda2, kTtau2 };

struct ViewSet {
  std::vector<AudioClip> views;
  ViewRecipe recipe;
};

constexpr double kMaxShiftFrac = 0.17;
constexpr double kDefaultNoiseRatio = 0.015;
constexpr double kDefaultSnrDb = 50.0;

class AugmentError : public std::runtime_error {
 public:
  explicit AugmentError(const std::string& what) : std::runtime_error(what) {}
};

// Zero-padded (non-circular) translation by round(frac * N) samples. A right
// shift moves content toward higher indices.
AudioClip time_shift(const AudioClip& clip, double frac, ShiftDirection direction);

// Additive Gaussian noise with sigma = ratio * max(peak(|clip|), 1e-6),
// regenerated on every call.
AudioClip gaussian_noise(const AudioClip& clip, double ratio, RngStream& rng);

// Mixes a random contiguous segment of `noise` (tiled when too short) scaled
// so that 10*log10(P_signal / P_noise) = snr_db.
AudioClip background_mix(const AudioClip& clip, const AudioClip& noise, double snr_db,
                         RngStream& rng);

// View recipes:
//   train4 - random-direction shift, gaussian noise, two background mixes
//   train1 - the unaugmented clip (single-view baseline)
//   ttda2  - random right shift, random left shift
//   ttau2  - the same two shifts, used by prediction-time refinement
ViewSet make_view_set(const AudioClip& clip, ViewRecipe recipe, RngStream& rng,
                      const std::vector<AudioClip>& noise_bank = {});

}  // namespace amaut
