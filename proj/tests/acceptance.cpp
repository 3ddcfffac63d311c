// Acceptance gate: one pass/fail line per criterion. Run with no arguments
// for the full gate or with `--criterion N` for a single entry.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "amaut/audio.hpp"
#include "amaut/augment.hpp"
#include "amaut/config.hpp"
#include "amaut/frontend.hpp"
#include "amaut/gradcheck.hpp"
#include "amaut/losses.hpp"
#include "amaut/model.hpp"
#include "amaut/ops.hpp"
#include "amaut/optim.hpp"
#include "amaut/rng.hpp"
#include "amaut/trainer.hpp"

using namespace amaut;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

AudioClip random_clip(std::size_t n, std::uint32_t rate, std::uint64_t seed) {
  RngStream rng(seed);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.channels = 1;
  clip.samples.resize(n);
  for (auto& s : clip.samples) s = static_cast<float>(rng.uniform(-0.9, 0.9));
  return clip;
}

// White noise plus a 60 Hz hum, one second each, for the background-mix views.
std::vector<AudioClip> make_noise_bank(std::uint32_t rate, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, 0x4e42);
  AudioClip white;
  white.sample_rate = rate;
  white.channels = 1;
  white.samples.resize(rate);
  for (auto& s : white.samples) s = static_cast<float>(0.3 * rng.normal());
  AudioClip hum;
  hum.sample_rate = rate;
  hum.channels = 1;
  hum.samples.resize(rate);
  for (std::size_t i = 0; i < hum.samples.size(); ++i)
    hum.samples[i] = static_cast<float>(0.3 * std::sin(2.0 * M_PI * 60.0 * i / rate));
  return {white, hum};
}

Dataset corpus_dataset(const SynthCorpus& corpus) {
  Dataset data;
  data.clips = corpus.clips;
  data.n_classes = corpus.manifest.n_classes();
  for (const auto& e : corpus.manifest.entries) data.labels.push_back(e.label);
  return data;
}

ModelConfig small_config(std::size_t n_mels, std::size_t classes) {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.n_mels = n_mels;
  cfg.mid_channels = 16;
  cfg.reduce_channels = 8;
  cfg.body_blocks = 1;
  cfg.n_transformer_blocks = 1;
  cfg.n_heads = 4;
  cfg.mlp_ratio = 2;
  cfg.n_classes = classes;
  cfg.classifier = ClassifierVariant::kShort;
  cfg.target_K = 12;
  return cfg;
}

std::string temp_path(const std::string& leaf) {
  return (std::filesystem::temp_directory_path() / leaf).string();
}

// Reference spectrogram from the definition: periodic Hann, naive direct
// DFT, one-sided power, triangular mel weights, log. Independent of the
// transform code under test.
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

// ---------------------------------------------------------------------------
// 1. Gradient suite: every differentiable primitive and every loss.

bool criterion_1(std::string& note) {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(2024);
  GradChecker checker(1e-4, 1e-5, 10);
  double worst = 0.0;
  std::size_t checks = 0;
  bool ok = true;
  std::string first_fail;

  auto run = [&](const char* what, GradChecker::Forward f, GradChecker::Backward b,
                 std::vector<std::size_t> shape, double excl = 0.0) {
    auto report = checker.check(f, b, shape, rng, excl);
    worst = std::max(worst, report.max_rel_err);
    ++checks;
    if (!report.pass && ok) {
      ok = false;
      first_fail = std::string(what) + ": " + report.detail;
    }
  };

  run("relu", [](const Tensord& x) { return relu(x); },
      [](const Tensord& x, const Tensord& dy) { return relu_backward(x, dy); },
      {3, 5}, 1e-3);
  run("gelu", [](const Tensord& x) { return gelu(x); },
      [](const Tensord& x, const Tensord& dy) { return gelu_backward(x, dy); },
      {3, 5});
  run("softmax", [](const Tensord& x) { return softmax(x); },
      [](const Tensord& x, const Tensord& dy) {
        return softmax_backward(softmax(x), dy);
      },
      {3, 5});
  run("mean_pool", [](const Tensord& x) { return mean_pool(x); },
      [](const Tensord& x, const Tensord& dy) {
        return mean_pool_backward(x.shape(), dy);
      },
      {2, 4, 3});

  Linear<double> fc(6, 4, rng, "g.fc");
  run("linear", [&](const Tensord& x) { return fc.forward(x); },
      [&](const Tensord&, const Tensord& dy) { return fc.backward(dy); }, {3, 6});

  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 2}, {2, 3}, {1, 0}}) {
    Conv1d<double> conv(3, 4, 5, stride, pad, rng, "g.conv");
    run("conv1d", [&](const Tensord& x) { return conv.forward(x); },
        [&](const Tensord&, const Tensord& dy) { return conv.backward(dy); },
        {2, 3, 9});
  }

  MaxPool1d<double> pool(2, 2);
  run("maxpool", [&](const Tensord& x) { return pool.forward(x); },
      [&](const Tensord&, const Tensord& dy) { return pool.backward(dy); },
      {2, 3, 8});

  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    BatchNorm1d<double> bn(3, "g.bn");
    run("batchnorm", [&](const Tensord& x) { return bn.forward(x, mode); },
        [&](const Tensord&, const Tensord& dy) { return bn.backward(dy); },
        {4, 3, 5});
  }

  LayerNorm<double> ln(6, "g.ln");
  run("layernorm", [&](const Tensord& x) { return ln.forward(x); },
      [&](const Tensord&, const Tensord& dy) { return ln.backward(dy); },
      {2, 3, 6});

  MultiHeadAttention<double> attn(8, 2, rng, "g.attn");
  run("attention", [&](const Tensord& x) { return attn.forward(x); },
      [&](const Tensord&, const Tensord& dy) { return attn.backward(dy); },
      {2, 3, 8});

  TransformerBlock<double> tblk(8, 2, 2, rng, "g.enc");
  run("transformer", [&](const Tensord& x) { return tblk.forward(x); },
      [&](const Tensord&, const Tensord& dy) { return tblk.backward(dy); },
      {2, 3, 8});

  for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
    BottleneckBlock<double> bblk(4, 2, stride, rng, "g.blk");
    run("bottleneck", [&](const Tensord& x) { return bblk.forward(x, Mode::kTrain); },
        [&](const Tensord&, const Tensord& dy) { return bblk.backward(dy); },
        {2, 4, 9}, 1e-3);
  }

  // Losses, checked through the softmax reparameterisation so the finite
  // differences stay on the simplex.
  auto loss_check = [&](const char* what,
                        std::function<LossResult<double>(const Tensord&)> loss_fn) {
    run(what,
        [=](const Tensord& x) {
          auto res = loss_fn(softmax(x));
          return Tensord({1}, {res.value});
        },
        [=](const Tensord& x, const Tensord& dy) {
          Tensord probs = softmax(x);
          auto res = loss_fn(probs);
          Tensord dprobs = res.grad;
          for (auto& v : dprobs.vec()) v *= dy[0];
          return softmax_backward(probs, dprobs);
        },
        {3, 5});
  };
  loss_check("lsr", [](const Tensord& p) {
    return lsr_loss(p, std::vector<std::size_t>{1, 0, 3});
  });
  loss_check("nm", [](const Tensord& p) { return nm_loss(p); });
  loss_check("en", [](const Tensord& p) { return en_loss(p); });
  loss_check("gen(1.1)", [](const Tensord& p) { return gen_loss(p, 1.1); });
  loss_check("gen(0.8)", [](const Tensord& p) { return gen_loss(p, 0.8); });
  TTDAConfig tcfg;
  loss_check("combined", [tcfg](const Tensord& p) { return ttda_loss(p, tcfg); });

  const double elapsed = seconds_since(t0);
  if (elapsed >= 120.0) {
    ok = false;
    if (first_fail.empty()) first_fail = "runtime " + fmt(elapsed) + " s over budget";
  }
  note = ok ? std::to_string(checks) + " checks, max rel err " + fmt(worst) + ", " +
                  fmt(elapsed) + " s"
            : first_fail;
  return ok;
}

// ---------------------------------------------------------------------------
// 2. Closed-form loss oracles.

bool criterion_2(std::string& note) {
  auto uniform = [](std::size_t b, std::size_t c) {
    return Tensord::full({b, c}, 1.0 / static_cast<double>(c));
  };
  Tensord onehot({4, 10});
  for (std::size_t j = 0; j < 4; ++j) onehot.at(j, j) = 1.0;

  struct Oracle {
    const char* what;
    double got, want, tol;
  };
  const std::vector<Oracle> oracles{
      {"en(uniform,C=4)", en_loss(uniform(3, 4)).value, std::log(4.0), 1e-5},
      {"gen(uniform,C=2,q=1.1)", gen_loss(uniform(5, 2), 1.1).value,
       (1.0 - std::pow(2.0, -0.1)) / 0.1, 1e-9},
      {"nm(one-hot,B=4,C=10)", nm_loss(onehot).value, -0.05, 1e-9},
      {"lsr(uniform,C=2)", lsr_loss(uniform(6, 2), {0, 1, 0, 1, 1, 0}).value,
       std::log(2.0), 1e-9}};

  for (const auto& o : oracles)
    if (std::abs(o.got - o.want) > o.tol) {
      note = std::string(o.what) + " = " + fmt(o.got) + ", want " + fmt(o.want);
      return false;
    }
  note = "4 oracles within tolerance";
  return true;
}

// ---------------------------------------------------------------------------
// 3. Multiview additivity on a 2-block toy model.

bool criterion_3(std::string& note) {
  ModelConfig cfg = small_config(8, 3);
  cfg.embed_dim = 16;
  cfg.mid_channels = 8;
  cfg.reduce_channels = 4;
  cfg.n_heads = 2;
  cfg.n_transformer_blocks = 2;
  cfg.target_K = 4;

  // Two clips whose spectrograms span 12 frames (200 + 11 * 80 samples).
  MelParams mel;
  mel.n_mels = 8;
  std::vector<AudioClip> clips{random_clip(1080, 8000, 5), random_clip(1080, 8000, 6)};
  const std::vector<std::size_t> labels{0, 2};
  const std::vector<AudioClip> bank = make_noise_bank(8000, 3);

  // One fixed draw of the four-view set per clip, shared by both runs.
  RngStream view_rng = RngStream::derive(7, 1);
  std::vector<ViewSet> sets;
  for (const auto& c : clips)
    sets.push_back(make_view_set(c, ViewRecipe::kTrain4, view_rng, bank));
  const std::size_t n_views = sets[0].views.size();
  std::vector<std::vector<const AudioClip*>> view_batches(n_views);
  for (std::size_t a = 0; a < n_views; ++a)
    for (const auto& s : sets) view_batches[a].push_back(&s.views[a]);

  AmautModelF aggregate(cfg, 12, 11);
  AmautModelF per_view(cfg, 12, 11);  // identical initialisation

  RngStream agg_rng = RngStream::derive(7, 2);
  StepReport report = multiview_gradient(aggregate, view_batches, labels, mel, agg_rng);
  if (report.skipped) {
    note = "aggregate step skipped on non-finite loss";
    return false;
  }

  // Per-view runs consume the identical dropout stream in the same order.
  RngStream solo_rng = RngStream::derive(7, 2);
  const auto agg_params = aggregate.params();
  const auto solo_params = per_view.params();
  std::vector<std::vector<float>> grad_sum(solo_params.size());
  for (std::size_t i = 0; i < solo_params.size(); ++i)
    grad_sum[i].assign(solo_params[i].grad->numel(), 0.0f);
  double loss_sum = 0.0;

  for (std::size_t a = 0; a < n_views; ++a) {
    per_view.zero_grad();
    Tensorf logits = per_view.forward_tokens(tokens_batch(view_batches[a], mel),
                                             Mode::kTrain, &solo_rng);
    Tensorf probs = softmax(logits);
    auto loss = lsr_loss(probs, labels);
    if (loss.value != report.view_losses[a]) {
      note = "view " + std::to_string(a) + " loss mismatch";
      return false;
    }
    loss_sum += loss.value;
    per_view.backward_tokens(softmax_backward(probs, loss.grad));
    for (std::size_t i = 0; i < solo_params.size(); ++i)
      for (std::size_t j = 0; j < grad_sum[i].size(); ++j)
        grad_sum[i][j] += solo_params[i].grad->vec()[j];
  }

  if (loss_sum != report.total_loss) {
    note = "aggregated loss differs from the per-view sum";
    return false;
  }
  std::size_t elements = 0;
  for (std::size_t i = 0; i < agg_params.size(); ++i) {
    if (agg_params[i].grad->vec() != grad_sum[i]) {
      note = "gradient of " + agg_params[i].name + " differs from the per-view sum";
      return false;
    }
    elements += grad_sum[i].size();
  }
  note = "loss and " + std::to_string(elements) + " gradient elements bit-identical over " +
         std::to_string(n_views) + " views";
  return true;
}

// ---------------------------------------------------------------------------
// 4. Arbitrary sample rates and lengths, no resampling.

bool criterion_4(std::string& note) {
  const auto t0 = std::chrono::steady_clock::now();
  MelParams mel;
  mel.n_mels = 16;
  ModelConfig cfg = small_config(16, 3);
  cfg.embed_dim = 16;
  cfg.mid_channels = 8;
  cfg.reduce_channels = 4;
  cfg.n_heads = 2;

  std::size_t combos = 0;
  for (std::uint32_t rate : {8000u, 16000u, 44100u, 48000u}) {
    for (double dur : {0.5, 1.0, 5.0, 10.0, 12.0}) {
      const std::size_t n = static_cast<std::size_t>(std::llround(rate * dur));
      AudioClip clip = random_clip(n, rate, 100 + combos);
      const std::size_t frames =
          mel_frame_count(n, mel.win_samples(rate), mel.hop_samples(rate));
      AmautModelF model(cfg, frames, 1);

      Tensorf tokens = tokens_batch({&clip}, mel);
      Tensorf feat = model.cnn_forward(tokens, Mode::kEval);
      if (feat.extent(1) != cfg.embed_dim) {
        note = "CNN output carries " + std::to_string(feat.extent(1)) +
               " channels at rate " + std::to_string(rate);
        return false;
      }
      Tensorf logits = model.forward_tokens(tokens, Mode::kEval);
      if (logits.extent(0) != 1 || logits.extent(1) != cfg.n_classes) {
        note = "bad logit shape " + logits.shape_str();
        return false;
      }
      for (std::size_t i = 0; i < logits.numel(); ++i)
        if (!std::isfinite(logits[i])) {
          note = "non-finite logits at " + std::to_string(rate) + " Hz, " + fmt(dur) + " s";
          return false;
        }
      ++combos;
    }
  }
  const double elapsed = seconds_since(t0);
  if (elapsed >= 60.0) {
    note = "runtime " + fmt(elapsed) + " s over budget";
    return false;
  }
  note = std::to_string(combos) + " rate/duration combinations, " + fmt(elapsed) + " s";
  return true;
}

// ---------------------------------------------------------------------------
// 5. Scheduler monotone then frozen.

bool criterion_5(std::string& note) {
  for (double lambda : {10.0, 40.0}) {
    for (double eta : {40.0, 200.0}) {
      ScheduleParams p{1e-3, lambda, eta};
      const std::size_t e_max = static_cast<std::size_t>(eta);
      for (std::size_t e = 1; e < e_max; ++e)
        if (!(lr_schedule(p, e) < lr_schedule(p, e - 1))) {
          note = "not strictly decreasing at epoch " + std::to_string(e) +
                 " (lambda=" + fmt(lambda) + ", eta=" + fmt(eta) + ")";
          return false;
        }
      const double frozen = lr_schedule(p, e_max - 1);
      for (std::size_t e = e_max; e < e_max + 50; ++e)
        if (lr_schedule(p, e) != frozen) {
          note = "not frozen after eta (lambda=" + fmt(lambda) + ", eta=" + fmt(eta) + ")";
          return false;
        }
    }
  }
  note = "strictly decreasing then frozen for all 4 (lambda, eta) pairs";
  return true;
}

// ---------------------------------------------------------------------------
// 6. Test-time augmentation/ensemble algebra.

bool criterion_6(std::string& note) {
  MelParams mel;
  mel.n_mels = 16;
  ModelConfig cfg = small_config(16, 3);
  const std::size_t frames = mel_frame_count(8000, 400, 160);
  AmautModelF model(cfg, frames, 21);
  AudioClip clip = random_clip(8000, 16000, 22);

  Predictor<float> predict = [&](const AudioClip& c) {
    return predict_probs(model, c, mel);
  };
  Tensorf plain = predict(clip);

  // Identity augmentations: zero views, and an explicit zero-fraction shift.
  RngStream r0(1);
  Tensorf aug0 = aug_refine(predict, clip, 0, r0);
  Tensorf shifted = predict(time_shift(clip, 0.0, ShiftDirection::kRight));
  for (std::size_t i = 0; i < plain.numel(); ++i) {
    if (std::abs(aug0[i] - plain[i]) > 1e-7f || std::abs(shifted[i] - plain[i]) > 1e-7f) {
      note = "identity augmentation drifted from the plain forward";
      return false;
    }
  }

  // Single-model hybrid consumes the same draws as plain aug.
  RngStream r1(33), r2(33);
  Tensorf hyb1 = hyb_refine(std::vector<Predictor<float>>{predict}, clip, 4, r1);
  Tensorf aug4 = aug_refine(predict, clip, 4, r2);
  if (hyb1.vec() != aug4.vec()) {
    note = "hyb with M=1 differs from aug";
    return false;
  }

  // mlt over identical checkpoints reduces to a single forward.
  const std::string path = temp_path("amaut_acc6.ckpt");
  save_checkpoint(model, path, {frames, 0, 0});
  auto m1 = load_checkpoint(path);
  auto m2 = load_checkpoint(path);
  std::filesystem::remove(path);
  std::vector<Predictor<float>> twins{
      [&](const AudioClip& c) { return predict_probs(*m1.model, c, mel); },
      [&](const AudioClip& c) { return predict_probs(*m2.model, c, mel); },
      [&](const AudioClip& c) { return predict_probs(*m1.model, c, mel); }};
  Tensorf mlt = mlt_refine(twins, clip);
  for (std::size_t i = 0; i < plain.numel(); ++i)
    if (std::abs(mlt[i] - plain[i]) > 1e-7f) {
      note = "mlt over identical checkpoints differs from a single forward";
      return false;
    }

  // Simplex preservation for every method.
  RngStream r3(55);
  for (const Tensorf& probs : {aug_refine(predict, clip, 4, r3), mlt,
                               hyb_refine(twins, clip, 2, r3)}) {
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
      if (probs[i] < -1e-6f) {
        note = "negative probability after refinement";
        return false;
      }
      sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      note = "refined probabilities sum to " + fmt(sum);
      return false;
    }
  }
  note = "identity, M=1 hybrid, identical-ensemble and simplex checks hold";
  return true;
}

// ---------------------------------------------------------------------------
// 7. Agreement rate equals a brute-force tally.

bool criterion_7(std::string& note) {
  RngStream rng(404);
  const std::size_t n = 1000, c = 7;
  std::vector<std::size_t> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.uniform_index(c);
    b[i] = rng.uniform_index(c);
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i) same += a[i] == b[i];
  if (agreement_rate(a, b, c) != static_cast<double>(same) / n) {
    note = "agreement differs from the brute-force tally";
    return false;
  }
  if (agreement_rate(a, a, c) != 1.0) {
    note = "self-agreement is not exactly 1";
    return false;
  }
  note = "exact match on 1000 random pairs; self-agreement = 1";
  return true;
}

// ---------------------------------------------------------------------------
// 8. Overfit smoke test: 200 clips, 3 classes, train4, <= 50 epochs.

bool criterion_8(std::string& note) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig exp = profile_defaults("synth");
  SynthSpec spec;
  spec.n_classes = 3;
  spec.clips_per_class = 67;
  spec.duration_s = 1.0;
  spec.sample_rate = 16000;
  spec.seed = 42;
  Dataset train = corpus_dataset(generate_synth_corpus(spec));
  train.clips.resize(200);
  train.labels.resize(200);

  TrainSettings settings = exp.train;
  settings.epochs = 50;
  settings.recipe = ViewRecipe::kTrain4;
  settings.seed = 42;
  settings.target_accuracy = 0.95;

  const auto bank = make_noise_bank(16000, 42);
  TrainResult result = train_model(train, train, exp.model, exp.mel, settings, bank);
  const double elapsed = seconds_since(t0);

  if (result.best_accuracy < 0.95) {
    note = "training accuracy " + fmt(result.best_accuracy) + " after " +
           std::to_string(result.history.size()) + " epochs";
    return false;
  }
  if (elapsed > 600.0) {
    note = "runtime " + fmt(elapsed) + " s over the 10 min budget";
    return false;
  }
  note = "train accuracy " + fmt(result.best_accuracy) + " in " +
         std::to_string(result.history.size()) + " epochs, " + fmt(elapsed) + " s";
  return true;
}

// ---------------------------------------------------------------------------
// 9. Four-view training beats single-view training on noisy held-out data.

bool criterion_9(std::string& note) {
  MelParams mel;
  mel.n_mels = 24;
  ModelConfig cfg = small_config(24, 3);

  SynthSpec train_spec;
  train_spec.n_classes = 3;
  train_spec.clips_per_class = 8;
  train_spec.duration_s = 0.5;
  train_spec.sample_rate = 16000;
  train_spec.seed = 77;
  Dataset train = corpus_dataset(generate_synth_corpus(train_spec));

  // Held-out split from a different generator seed, corrupted with shifts
  // and heavy additive noise so robustness separates the two recipes.
  SynthSpec held_spec = train_spec;
  held_spec.clips_per_class = 40;
  held_spec.seed = 78;
  Dataset held = corpus_dataset(generate_synth_corpus(held_spec));
  RngStream corrupt(79);
  for (auto& clip : held.clips) {
    const auto dir = corrupt.uniform() < 0.5 ? ShiftDirection::kLeft : ShiftDirection::kRight;
    clip = time_shift(clip, corrupt.uniform(0.0, kMaxShiftFrac), dir);
    clip = gaussian_noise(clip, 0.35, corrupt);
  }

  const auto bank = make_noise_bank(16000, 80);
  Dataset no_val;
  no_val.n_classes = 3;

  auto run = [&](std::uint64_t seed, ViewRecipe recipe) {
    TrainSettings settings;
    settings.epochs = 25;
    settings.batch_size = 8;
    settings.schedule.lr0 = 5e-4;
    settings.recipe = recipe;
    settings.seed = seed;
    TrainResult r = train_model(train, no_val, cfg, mel, settings, bank);
    EvalResult e = evaluate(*r.model, held, mel);
    return std::pair<double, std::vector<std::size_t>>{e.accuracy, e.predictions};
  };

  const std::size_t n_seeds = 11;
  std::vector<double> acc4(n_seeds), acc1(n_seeds);
  std::vector<std::vector<std::size_t>> pred4(n_seeds), pred1(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    std::tie(acc4[s], pred4[s]) = run(1000 + s, ViewRecipe::kTrain4);
    std::tie(acc1[s], pred1[s]) = run(1000 + s, ViewRecipe::kTrain1);
  }

  std::size_t acc_wins = 0, agree_wins = 0;
  for (std::size_t p = 0; p < 10; ++p) {
    if (acc4[p] + acc4[p + 1] > acc1[p] + acc1[p + 1]) ++acc_wins;
    if (agreement_rate(pred4[p], pred4[p + 1], 3) >=
        agreement_rate(pred1[p], pred1[p + 1], 3))
      ++agree_wins;
  }
  double mean4 = 0.0, mean1 = 0.0;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    mean4 += acc4[s] / n_seeds;
    mean1 += acc1[s] / n_seeds;
  }
  const bool ok = acc_wins >= 7 && agree_wins >= 6;
  note = "accuracy wins " + std::to_string(acc_wins) + "/10 (mean " + fmt(mean4) +
         " vs " + fmt(mean1) + "), agreement wins " + std::to_string(agree_wins) + "/10";
  return ok;
}

// ---------------------------------------------------------------------------
// 10. Adaptation objective descends and accuracy survives.

bool criterion_10(std::string& note) {
  MelParams mel;
  mel.n_mels = 24;
  ModelConfig cfg = small_config(24, 3);

  SynthSpec train_spec;
  train_spec.n_classes = 3;
  train_spec.clips_per_class = 8;
  train_spec.duration_s = 0.5;
  train_spec.sample_rate = 16000;
  train_spec.seed = 500;
  Dataset train = corpus_dataset(generate_synth_corpus(train_spec));

  SynthSpec test_spec = train_spec;
  test_spec.seed = 600;
  Dataset test = corpus_dataset(generate_synth_corpus(test_spec));
  RngStream shift_rng(601);
  for (auto& clip : test.clips)
    clip = time_shift(clip, shift_rng.uniform(0.05, 0.15), ShiftDirection::kRight);

  TrainSettings settings;
  settings.epochs = 10;
  settings.batch_size = 32;
  settings.recipe = ViewRecipe::kTrain4;
  settings.seed = 500;
  TrainResult trained =
      train_model(train, train, cfg, mel, settings, make_noise_bank(16000, 500));
  const double baseline = evaluate(*trained.model, test, mel).accuracy;

  const std::string path = temp_path("amaut_acc10.ckpt");
  save_checkpoint(*trained.model, path, {trained.model->planned_frames(), 0, 0});

  TTDAConfig ttda;  // default adaptation profile, 10 epochs
  std::size_t monotone = 0;
  double adapted_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto loaded = load_checkpoint(path);
    AdaptTrace trace = ttda_adapt(*loaded.model, test, ttda, mel, seed);
    if (trace.per_epoch_loss.size() >= 3 &&
        trace.per_epoch_loss[1] <= trace.per_epoch_loss[0] &&
        trace.per_epoch_loss[2] <= trace.per_epoch_loss[1])
      ++monotone;
    adapted_sum += evaluate(*loaded.model, test, mel).accuracy;
  }
  std::filesystem::remove(path);

  const double adapted = adapted_sum / 10.0;
  const bool ok = monotone >= 8 && adapted >= baseline - 0.01;
  note = "monotone first-3-epoch descent in " + std::to_string(monotone) +
         "/10 seeds; accuracy " + fmt(baseline) + " -> " + fmt(adapted);
  return ok;
}

// ---------------------------------------------------------------------------
// 11. Checkpoint round trip is bit-exact on 100 clips.

bool criterion_11(std::string& note) {
  MelParams mel;
  mel.n_mels = 16;
  ModelConfig cfg = small_config(16, 3);
  const std::size_t frames = mel_frame_count(8000, 400, 160);
  AmautModelF model(cfg, frames, 31);

  // Push the batch-norm running statistics off their initial values so the
  // round trip covers more than freshly initialised weights.
  RngStream drop_rng(32);
  for (int i = 0; i < 3; ++i) {
    AudioClip warm = random_clip(8000, 16000, 900 + i);
    model.forward_tokens(tokens_batch({&warm}, mel), Mode::kTrain, &drop_rng);
  }

  const std::string path = temp_path("amaut_acc11.ckpt");
  save_checkpoint(model, path, {frames, 7, 9});
  auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);

  std::size_t clips_checked = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    AudioClip clip = random_clip(8000, 16000, 2000 + s);
    Tensorf before = model.forward_tokens(tokens_batch({&clip}, mel), Mode::kEval);
    Tensorf after = loaded.model->forward_tokens(tokens_batch({&clip}, mel), Mode::kEval);
    if (before.vec() != after.vec()) {
      note = "logits diverged on clip " + std::to_string(s);
      return false;
    }
    ++clips_checked;
  }
  note = "bit-exact eval logits on " + std::to_string(clips_checked) + " clips";
  return true;
}

// ---------------------------------------------------------------------------
// 12. Mel front end vs direct-DFT oracle.

bool criterion_12(std::string& note) {
  MelParams p;
  p.n_mels = 24;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::uint32_t rate = s % 2 == 0 ? 16000 : 8000;
    RngStream len_rng(3000 + s);
    const std::size_t n = static_cast<std::size_t>(
        len_rng.uniform(0.3, 0.8) * rate);
    AudioClip clip = random_clip(n, rate, 4000 + s);

    TokenMatrix got = mel_spectrogram(clip, p);
    const std::size_t want_frames = 1 + (n - p.win_samples(rate)) / p.hop_samples(rate);
    if (got.n_frames() != want_frames) {
      note = "frame count " + std::to_string(got.n_frames()) + ", formula gives " +
             std::to_string(want_frames);
      return false;
    }
    Tensord want = reference_mel(clip, p);
    for (std::size_t i = 0; i < want.numel(); ++i)
      worst = std::max(worst, std::abs(got.values[i] - want[i]));
  }
  if (worst >= 1e-6) {
    note = "worst absolute deviation " + fmt(worst);
    return false;
  }
  note = "20 clips within " + fmt(worst) + " of the direct-DFT reference";
  return true;
}

struct Criterion {
  int id;
  const char* title;
  bool (*fn)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "gradient suite", criterion_1},
    {2, "closed-form loss oracles", criterion_2},
    {3, "multiview additivity", criterion_3},
    {4, "arbitrary rates and lengths", criterion_4},
    {5, "learning-rate schedule", criterion_5},
    {6, "refinement algebra", criterion_6},
    {7, "agreement rate", criterion_7},
    {8, "overfit smoke test", criterion_8},
    {9, "multiview trend", criterion_9},
    {10, "adaptation descent", criterion_10},
    {11, "checkpoint round trip", criterion_11},
    {12, "mel front end vs oracle", criterion_12},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 2;
    }
  }

  int failures = 0;
  for (const auto& c : kCriteria) {
    if (only != 0 && c.id != only) continue;
    std::string detail;
    bool pass = false;
    try {
      pass = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", c.id, c.title,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
