#include "amaut/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "amaut/rng.hpp"

namespace amaut {
namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

void write_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;

}  // namespace

AudioClip decode_wav(const std::vector<std::uint8_t>& bytes, std::size_t* clamped) {
  if (bytes.size() < 12) throw DecodeError("wav: file too small for RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0)
    throw DecodeError("wav: missing RIFF chunk");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DecodeError("wav: RIFF form type is not WAVE");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data_ptr = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    char id[5] = {0};
    std::memcpy(id, bytes.data() + pos, 4);
    const std::uint32_t len = read_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + len > bytes.size())
      throw DecodeError(std::string("wav: chunk '") + id + "' overruns file");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw DecodeError("wav: fmt chunk truncated");
      const std::uint8_t* f = bytes.data() + pos;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_ptr = bytes.data() + pos;
      data_len = len;
    }
    pos += len + (len & 1);  // chunks are word-aligned
  }

  if (!have_fmt) throw DecodeError("wav: missing fmt chunk");
  if (!data_ptr) throw DecodeError("wav: missing data chunk");
  if (channels == 0) throw DecodeError("wav: fmt declares zero channels");
  if (rate == 0) throw DecodeError("wav: fmt declares zero sample rate");

  AudioClip clip;
  clip.sample_rate = rate;
  clip.channels = channels;
  std::size_t clamp_count = 0;

  if (format == kFormatPcm && bits == 16) {
    const std::size_t n = data_len / 2;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int16_t s =
          static_cast<std::int16_t>(read_u16(data_ptr + 2 * i));
      clip.samples[i] = static_cast<float>(s) / 32768.0f;
    }
  } else if (format == kFormatFloat && bits == 32) {
    const std::size_t n = data_len / 4;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::uint32_t u = read_u32(data_ptr + 4 * i);
      std::memcpy(&v, &u, 4);
      if (!std::isfinite(v)) throw DecodeError("wav: non-finite float sample");
      if (v > 1.0f) {
        v = 1.0f;
        ++clamp_count;
      } else if (v < -1.0f) {
        v = -1.0f;
        ++clamp_count;
      }
      clip.samples[i] = v;
    }
  } else {
    throw UnsupportedFormatError("wav: unsupported codec (format tag " +
                                 std::to_string(format) + ", " + std::to_string(bits) +
                                 " bits); need 16-bit PCM or 32-bit float");
  }

  if (clip.samples.size() % channels != 0)
    throw DecodeError("wav: data length is not a whole number of frames");
  if (clamped) *clamped = clamp_count;
  return clip;
}

std::vector<std::uint8_t> encode_wav16(const AudioClip& clip) {
  std::vector<std::uint8_t> out;
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  write_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  write_u32(out, 16);
  write_u16(out, kFormatPcm);
  write_u16(out, static_cast<std::uint16_t>(clip.channels));
  write_u32(out, clip.sample_rate);
  write_u32(out, clip.sample_rate * clip.channels * 2);  // byte rate
  write_u16(out, static_cast<std::uint16_t>(clip.channels * 2));
  write_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  write_u32(out, data_len);
  for (float v : clip.samples) {
    double s = std::lround(static_cast<double>(v) * 32768.0);
    s = std::clamp(s, -32768.0, 32767.0);
    write_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
  }
  return out;
}

AudioClip read_wav_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("wav: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

void write_wav_file(const std::string& path, const AudioClip& clip) {
  const auto bytes = encode_wav16(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("wav: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

AudioClip stereo_to_mono(const AudioClip& clip) {
  if (clip.samples.empty()) throw DegenerateInputError("stereo_to_mono: empty clip");
  if (clip.channels == 1) return clip;
  const std::size_t frames = clip.frames();
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.channels = 1;
  out.samples.resize(frames);
  const float inv = 1.0f / static_cast<float>(clip.channels);
  for (std::size_t j = 0; j < frames; ++j) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < clip.channels; ++c)
      acc += clip.samples[j * clip.channels + c];
    out.samples[j] = acc * inv;
  }
  return out;
}

DatasetManifest load_manifest(const std::string& path, bool labels_visible) {
  std::ifstream in(path);
  if (!in) throw ManifestError("manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("#classes:", 0) == 0) {
      if (have_header)
        throw ManifestError("manifest: duplicate header at line " + std::to_string(lineno));
      have_header = true;
      std::stringstream names(line.substr(9));
      std::string name;
      while (std::getline(names, name, ';'))
        if (!name.empty()) m.class_names.push_back(name);
      continue;
    }
    if (!have_header)
      throw ManifestError("manifest: missing #classes header before line " +
                          std::to_string(lineno));
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw ManifestError("manifest: malformed entry at line " + std::to_string(lineno));
    ManifestEntry e;
    e.path = line.substr(0, comma);
    if (labels_visible) {
      try {
        const long v = std::stol(line.substr(comma + 1));
        if (v < 0 || static_cast<std::size_t>(v) >= m.class_names.size())
          throw ManifestError("manifest: label index " + std::to_string(v) +
                              " out of range at line " + std::to_string(lineno));
        e.label = static_cast<std::uint32_t>(v);
      } catch (const std::invalid_argument&) {
        throw ManifestError("manifest: non-numeric label at line " + std::to_string(lineno));
      }
    }
    m.entries.push_back(std::move(e));
  }
  if (m.class_names.size() < 2)
    throw ManifestError("manifest: need at least 2 classes, got " +
                        std::to_string(m.class_names.size()));
  if (m.entries.empty()) throw ManifestError("manifest: no entries");
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw ManifestError("manifest: cannot write " + path);
  out << "#classes:";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i)
    out << (i ? ";" : "") << manifest.class_names[i];
  out << "\n";
  for (const auto& e : manifest.entries) out << e.path << "," << e.label << "\n";
}

void SynthSpec::validate() const {
  if (n_classes < 1 || clips_per_class < 1)
    throw std::invalid_argument("synth: counts must be >= 1");
  if (duration_s < 0.5 || duration_s > 12.0)
    throw std::invalid_argument("synth: duration must lie in [0.5, 12] s");
  if (sample_rate == 0) throw std::invalid_argument("synth: sample rate must be positive");
}

double synth_class_frequency(std::uint32_t k) {
  // Half-octave spacing starting at 440 Hz.
  return 440.0 * std::pow(2.0, 0.5 * k);
}

SynthCorpus generate_synth_corpus(const SynthSpec& spec) {
  spec.validate();
  SynthCorpus corpus;
  for (std::uint32_t k = 0; k < spec.n_classes; ++k)
    corpus.manifest.class_names.push_back("class" + std::to_string(k));

  const std::size_t n = static_cast<std::size_t>(spec.duration_s * spec.sample_rate);
  for (std::uint32_t k = 0; k < spec.n_classes; ++k) {
    for (std::uint32_t c = 0; c < spec.clips_per_class; ++c) {
      RngStream rng = RngStream::derive(spec.seed, k, c);
      const double base = synth_class_frequency(k);
      // Jitter stays well inside one DFT bin of a full-clip transform.
      const double freq = base + rng.uniform(-0.4, 0.4) / spec.duration_s;
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      // Second harmonic at reduced amplitude gives the classes some timbre.
      const double h2 = 0.2 + 0.1 * rng.uniform();
      AudioClip clip;
      clip.sample_rate = spec.sample_rate;
      clip.channels = 1;
      clip.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / spec.sample_rate;
        double v = 0.5 * std::sin(2.0 * M_PI * freq * t + phase) +
                   0.5 * h2 * std::sin(4.0 * M_PI * freq * t + 2.0 * phase) +
                   0.01 * rng.normal();
        clip.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
      corpus.clips.push_back(std::move(clip));
      ManifestEntry e;
      e.path = "class" + std::to_string(k) + "_" + std::to_string(c) + ".wav";
      e.label = k;
      corpus.manifest.entries.push_back(std::move(e));
    }
  }
  return corpus;
}

}  // namespace amaut
