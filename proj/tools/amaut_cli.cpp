// amaut: train / adapt / eval / agree / synth for the multiview audio
// transformer pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amaut/config.hpp"
#include "amaut/trainer.hpp"

namespace fs = std::filesystem;
using namespace amaut;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig resolve_config(const CommonOpts& opts, const std::string& profile) {
  ExperimentConfig cfg =
      opts.config_path.empty() ? profile_defaults(profile)
                               : load_experiment_config(opts.config_path);
  if (opts.seed_set) {
    cfg.train.seed = opts.seed;
    cfg.dataset.synth.seed = opts.seed;
  }
  return cfg;
}

Dataset manifest_dataset(const std::string& manifest_path, bool labels_visible) {
  const DatasetManifest manifest = load_manifest(manifest_path, labels_visible);
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset data;
  data.n_classes = manifest.n_classes();
  for (const auto& entry : manifest.entries) {
    const fs::path p = fs::path(entry.path).is_absolute() ? fs::path(entry.path)
                                                          : base / entry.path;
    data.clips.push_back(read_wav_file(p.string()));
    if (labels_visible) data.labels.push_back(entry.label);
  }
  return data;
}

// Deterministic synth split: every ceil(1/val_fraction)-th clip per class is
// held out, so both splits cover all classes.
void split_synth(const SynthCorpus& corpus, double val_fraction, Dataset& train,
                 Dataset& val) {
  train.n_classes = val.n_classes = corpus.manifest.n_classes();
  const std::size_t stride =
      val_fraction > 0.0 ? static_cast<std::size_t>(std::ceil(1.0 / val_fraction)) : 0;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    Dataset& dst = (stride && i % stride == stride - 1) ? val : train;
    dst.clips.push_back(corpus.clips[i]);
    dst.labels.push_back(corpus.manifest.entries[i].label);
  }
}

// Two deterministic backdrop clips (broadband noise and a low hum) used when
// no noise bank is configured; train4 needs at least two mix sources.
std::vector<AudioClip> default_noise_bank(std::uint32_t rate, std::size_t frames,
                                          std::uint64_t seed) {
  std::vector<AudioClip> bank;
  RngStream rng = RngStream::derive(seed, 0x4e42);  // noise bank stream
  AudioClip white{std::vector<float>(frames), rate, 1};
  for (auto& s : white.samples) s = static_cast<float>(0.3 * rng.normal());
  bank.push_back(std::move(white));
  AudioClip hum{std::vector<float>(frames), rate, 1};
  const double w = 2.0 * 3.14159265358979323846 * 60.0 / rate;
  for (std::size_t i = 0; i < frames; ++i)
    hum.samples[i] = static_cast<float>(0.3 * std::sin(w * i) +
                                        0.05 * rng.normal());
  bank.push_back(std::move(hum));
  return bank;
}

std::vector<AudioClip> resolve_noise_bank(const ExperimentConfig& cfg,
                                          const Dataset& train) {
  if (!cfg.noise_bank_paths.empty()) {
    std::vector<AudioClip> bank;
    for (const auto& p : cfg.noise_bank_paths) bank.push_back(read_wav_file(p));
    return bank;
  }
  const auto& ref = train.clips.at(0);
  return default_noise_bank(ref.sample_rate, ref.frames(), cfg.train.seed);
}

void load_train_val(const ExperimentConfig& cfg, Dataset& train, Dataset& val) {
  if (cfg.dataset.kind == DatasetConfig::Kind::kSynth) {
    split_synth(generate_synth_corpus(cfg.dataset.synth), cfg.dataset.val_fraction,
                train, val);
  } else {
    train = manifest_dataset(cfg.dataset.manifest_path, true);
  }
}

Dataset load_eval_set(const ExperimentConfig& cfg, const std::string& manifest_override,
                      bool labels_visible) {
  if (!manifest_override.empty())
    return manifest_dataset(manifest_override, labels_visible);
  if (cfg.dataset.kind == DatasetConfig::Kind::kManifest)
    return manifest_dataset(cfg.dataset.manifest_path, labels_visible);
  SynthCorpus corpus = generate_synth_corpus(cfg.dataset.synth);
  Dataset data;
  data.n_classes = corpus.manifest.n_classes();
  data.clips = std::move(corpus.clips);
  if (labels_visible)
    for (const auto& e : corpus.manifest.entries) data.labels.push_back(e.label);
  return data;
}

Predictor<float> make_predictor(AmautModelF& model, const MelParams& mel) {
  return [&model, mel](const AudioClip& clip) {
    return predict_probs(model, clip, mel);
  };
}

int cmd_train(const CommonOpts& opts, const std::string& profile,
              const std::string& out_path) {
  ExperimentConfig cfg = resolve_config(opts, profile);
  Dataset train, val;
  load_train_val(cfg, train, val);
  if (train.size() == 0) throw ManifestError("train: no clips in training split");
  const std::vector<AudioClip> bank = resolve_noise_bank(cfg, train);
  ModelConfig mc = cfg.model;
  mc.n_classes = train.n_classes;

  const std::string run_id = "train-" + cfg.profile;
  TrainResult result =
      train_model(train, val, mc, cfg.mel, cfg.train, bank, [&](const EpochMetrics& m) {
        std::cout << metrics_line(run_id, m.epoch, "train", m.train_loss, m.val_accuracy,
                                  m.seconds, cfg.train.seed)
                  << "\n";
      });
  if (val.size() > 0)
    std::cout << "best epoch " << result.best_epoch << " val accuracy "
              << result.best_accuracy << "\n";

  if (!out_path.empty()) {
    const auto& ref = train.clips[0];
    CheckpointMeta meta;
    meta.planned_frames = mel_frame_count(ref.frames(),
                                          cfg.mel.win_samples(ref.sample_rate),
                                          cfg.mel.hop_samples(ref.sample_rate));
    meta.epoch = cfg.train.epochs;
    meta.rng_word = cfg.train.seed;
    save_checkpoint(*result.model, out_path, meta);
    std::cout << "saved " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_adapt(const CommonOpts& opts, const std::string& profile,
              const std::string& ckpt_path, const std::string& manifest_override,
              const std::string& out_path) {
  ExperimentConfig cfg = resolve_config(opts, profile);
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  // Adaptation never sees labels; the manifest is read in feature-only mode.
  Dataset test = load_eval_set(cfg, manifest_override, false);
  if (test.size() == 0) throw ManifestError("adapt: empty test set");

  AdaptTrace trace = ttda_adapt(*ckpt.model, test, cfg.ttda, cfg.mel, cfg.train.seed);
  for (std::size_t e = 0; e < trace.per_epoch_loss.size(); ++e)
    std::cout << metrics_line("adapt-" + cfg.profile, e, "test",
                              trace.per_epoch_loss[e], 0.0, 0.0, cfg.train.seed)
              << "\n";
  if (trace.early_stopped) std::cout << "early stop: objective diverged\n";

  if (!out_path.empty()) {
    CheckpointMeta meta = ckpt.meta;
    meta.epoch += trace.per_epoch_loss.size();
    save_checkpoint(*ckpt.model, out_path, meta);
    std::cout << "saved " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& profile,
             const std::vector<std::string>& ckpt_paths,
             const std::string& manifest_override, const std::string& refine,
             std::size_t views) {
  ExperimentConfig cfg = resolve_config(opts, profile);
  if (ckpt_paths.empty()) throw ConfigError("eval: at least one --checkpoint required");
  std::vector<LoadedCheckpoint> ckpts;
  for (const auto& p : ckpt_paths) ckpts.push_back(load_checkpoint(p));
  Dataset test = load_eval_set(cfg, manifest_override, true);
  if (test.size() == 0) throw ManifestError("eval: empty test set");

  RefinementSpec spec = cfg.refine;
  if (refine == "none")
    spec.method = RefineMethod::kNone;
  else if (refine == "aug")
    spec.method = RefineMethod::kAug;
  else if (refine == "mlt")
    spec.method = RefineMethod::kMlt;
  else if (refine == "hyb")
    spec.method = RefineMethod::kHyb;
  else if (!refine.empty())
    throw ConfigError("eval: unknown refine method '" + refine + "'");
  if (views > 0) spec.views = views;
  spec.models = ckpts.size();
  if (spec.method == RefineMethod::kMlt || spec.method == RefineMethod::kHyb)
    spec.validate();

  std::vector<Predictor<float>> predictors;
  for (auto& c : ckpts) predictors.push_back(make_predictor(*c.model, cfg.mel));

  RngStream rng = RngStream::derive(cfg.train.seed, 0x5456);  // refinement shifts
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Tensorf probs;
    switch (spec.method) {
      case RefineMethod::kNone:
        probs = predictors[0](test.clips[i]);
        break;
      case RefineMethod::kAug:
        probs = aug_refine(predictors[0], test.clips[i], spec.views, rng);
        break;
      case RefineMethod::kMlt:
        probs = mlt_refine(predictors, test.clips[i]);
        break;
      case RefineMethod::kHyb:
        probs = hyb_refine(predictors, test.clips[i], spec.views, rng);
        break;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.numel(); ++c)
      if (probs[c] > probs[best]) best = c;
    if (best == test.labels[i]) ++hits;
  }
  const double acc = static_cast<double>(hits) / test.size();
  std::cout << metrics_line("eval-" + cfg.profile, 0, "test", 0.0, acc, 0.0,
                            cfg.train.seed)
            << "\n";
  return kExitOk;
}

int cmd_agree(const CommonOpts& opts, const std::string& profile,
              const std::vector<std::string>& ckpt_paths,
              const std::string& manifest_override) {
  ExperimentConfig cfg = resolve_config(opts, profile);
  if (ckpt_paths.size() < 2)
    throw ConfigError("agree: at least two --checkpoint paths required");
  Dataset test = load_eval_set(cfg, manifest_override, false);
  if (test.size() == 0) throw ManifestError("agree: empty test set");
  test.labels.clear();  // agreement never reads labels

  std::vector<std::vector<std::size_t>> preds;
  std::size_t n_classes = 0;
  for (const auto& p : ckpt_paths) {
    LoadedCheckpoint ckpt = load_checkpoint(p);
    n_classes = ckpt.model->config().n_classes;
    preds.push_back(predict_labels(*ckpt.model, test, cfg.mel));
  }
  for (std::size_t a = 0; a < preds.size(); ++a)
    for (std::size_t b = a + 1; b < preds.size(); ++b)
      std::cout << "agreement[" << a << "," << b
                << "]=" << agreement_rate(preds[a], preds[b], n_classes) << "\n";
  return kExitOk;
}

int cmd_synth(const CommonOpts& opts, const std::string& profile,
              const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(opts, profile);
  SynthCorpus corpus = generate_synth_corpus(cfg.dataset.synth);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < corpus.clips.size(); ++i)
    write_wav_file((fs::path(out_dir) / corpus.manifest.entries[i].path).string(),
                   corpus.clips[i]);
  const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  save_manifest(manifest_path, corpus.manifest);
  std::cout << "wrote " << corpus.clips.size() << " clips and " << manifest_path
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiview audio transformer pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string profile = "synth";
  std::string out_path;
  std::string ckpt_path;
  std::vector<std::string> ckpt_paths;
  std::string manifest_path;
  std::string refine;
  std::size_t views = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "key = value config file");
    sub->add_option("--profile", profile, "am|sc1|sc2|vs|cs|synth");
    sub->add_option("--seed", opts.seed, "override the run seed")
        ->each([&](const std::string&) { opts.seed_set = true; });
  };

  auto* train = app.add_subcommand("train", "train from scratch");
  add_common(train);
  train->add_option("--out", out_path, "checkpoint output path");

  auto* adapt = app.add_subcommand("adapt", "unsupervised test-time adaptation");
  add_common(adapt);
  adapt->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  adapt->add_option("--manifest", manifest_path, "test manifest (labels unused)");
  adapt->add_option("--out", out_path, "adapted checkpoint output path");

  auto* eval = app.add_subcommand("eval", "labelled evaluation");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_paths, "checkpoint (repeatable)")->required();
  eval->add_option("--manifest", manifest_path, "test manifest");
  eval->add_option("--refine", refine, "none|aug|mlt|hyb");
  eval->add_option("--views", views, "augmented views for aug/hyb refinement");

  auto* agree = app.add_subcommand("agree", "cross-model agreement rate");
  add_common(agree);
  agree->add_option("--checkpoint", ckpt_paths, "checkpoint (repeatable)")->required();
  agree->add_option("--manifest", manifest_path, "test manifest (labels unused)");

  auto* synth = app.add_subcommand("synth", "write the synthetic corpus");
  add_common(synth);
  synth->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(opts, profile, out_path);
    if (adapt->parsed())
      return cmd_adapt(opts, profile, ckpt_path, manifest_path, out_path);
    if (eval->parsed())
      return cmd_eval(opts, profile, ckpt_paths, manifest_path, refine, views);
    if (agree->parsed()) return cmd_agree(opts, profile, ckpt_paths, manifest_path);
    if (synth->parsed()) return cmd_synth(opts, profile, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigurationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NonFiniteGradient& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::runtime_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
