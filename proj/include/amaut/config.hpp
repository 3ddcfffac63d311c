#pragma once

#include <map>
#include <string>
#include <vector>

#include "amaut/audio.hpp"
#include "amaut/frontend.hpp"
#include "amaut/losses.hpp"
#include "amaut/model.hpp"
#include "amaut/trainer.hpp"

namespace amaut {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DatasetConfig {
  enum class Kind { kSynth, kManifest } kind = Kind::kSynth;
  std::string manifest_path;
  SynthSpec synth;
  double val_fraction = 0.2;  // synth split held out for validation
};

struct ExperimentConfig {
  std::string profile = "synth";
  DatasetConfig dataset;
  MelParams mel;
  ModelConfig model;
  TrainSettings train;
  TTDAConfig ttda;
  RefinementSpec refine;
  std::vector<std::string> noise_bank_paths;
  std::string output_dir = ".";

  void validate() const;
};

// Per-dataset adaptation/schedule profiles. The named dataset profiles carry
// the published defaults; "synth" is the desk-scale configuration used by
// the bundled corpus.
ExperimentConfig profile_defaults(const std::string& profile);

// Key-value config file: `section.key = value` lines, `#` comments.
// Unknown keys are rejected. Values override the profile named by the
// `profile` key (which must come first if present).
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& text);

std::string metrics_line(const std::string& run_id, std::size_t epoch,
                         const std::string& split, double loss, double accuracy,
                         double seconds, std::uint64_t seed);

}  // namespace amaut
