#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace amaut {

// Normalised PCM audio. Samples are interleaved when channels > 1 and lie in
// [-1, 1] after decode.
struct AudioClip {
  std::vector<float> samples;
  std::uint32_t sample_rate = 0;
  std::uint32_t channels = 1;

  std::size_t frames() const { return channels ? samples.size() / channels : 0; }
  double duration_s() const {
    return sample_rate ? static_cast<double>(frames()) / sample_rate : 0.0;
  }
};

class DecodeError : public std::runtime_error {
 public:
  explicit DecodeError(const std::string& what) : std::runtime_error(what) {}
};

class UnsupportedFormatError : public DecodeError {
 public:
  explicit UnsupportedFormatError(const std::string& what) : DecodeError(what) {}
};

class DegenerateInputError : public std::runtime_error {
 public:
  explicit DegenerateInputError(const std::string& what) : std::runtime_error(what) {}
};

// RIFF/WAVE with 16-bit integer or 32-bit float PCM. Integer samples map to
// [-1, 1) through division by 32768. Float samples outside [-1, 1] are
// clamped; the clamp count is reported through `clamped` when non-null.
AudioClip decode_wav(const std::vector<std::uint8_t>& bytes, std::size_t* clamped = nullptr);

// 16-bit PCM writer; decode(encode(decode(b))) round-trips bit-exactly.
std::vector<std::uint8_t> encode_wav16(const AudioClip& clip);

AudioClip read_wav_file(const std::string& path);
void write_wav_file(const std::string& path, const AudioClip& clip);

// Channel-average mono conversion: out[j] = mean_i x[i][j].
AudioClip stereo_to_mono(const AudioClip& clip);

struct ManifestEntry {
  std::string path;
  std::uint32_t label = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::uint32_t n_classes() const { return static_cast<std::uint32_t>(class_names.size()); }
};

class ManifestError : public std::runtime_error {
 public:
  explicit ManifestError(const std::string& what) : std::runtime_error(what) {}
};

// Line-oriented manifest: header `#classes:a;b;c`, then `path,label` lines.
// In feature-only mode the label column is never parsed; entries carry
// label 0 and callers must not read it.
DatasetManifest load_manifest(const std::string& path, bool labels_visible = true);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

struct SynthSpec {
  std::uint32_t n_classes = 3;
  std::uint32_t clips_per_class = 10;
  double duration_s = 1.0;
  std::uint32_t sample_rate = 16000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthCorpus {
  DatasetManifest manifest;
  std::vector<AudioClip> clips;  // same order as manifest.entries
};

// Deterministic toy corpus: class k is a sinusoid at a class-specific base
// frequency (class 0 at 440 Hz) with slight sub-bin frequency jitter, random
// phase and low-amplitude noise. Pure function of its parameters.
SynthCorpus generate_synth_corpus(const SynthSpec& spec);

// Base frequency used for class k by the generator.
double synth_class_frequency(std::uint32_t k);

}  // namespace amaut
