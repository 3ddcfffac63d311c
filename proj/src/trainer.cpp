#include "amaut/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace amaut {
namespace {

Tensorf clip_tokens(const AudioClip& clip, const MelParams& mel) {
  const AudioClip mono = clip.channels == 1 ? clip : stereo_to_mono(clip);
  const TokenMatrix m = mel_spectrogram(mono, mel);
  return m.values.cast<float>();
}

// Fisher-Yates with our deterministic stream.
void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

}  // namespace

Tensorf tokens_batch(const std::vector<const AudioClip*>& clips, const MelParams& mel) {
  if (clips.empty()) throw std::invalid_argument("tokens_batch: empty batch");
  Tensorf first = clip_tokens(*clips[0], mel);
  const std::size_t f = first.extent(0), t = first.extent(1);
  Tensorf batch({clips.size(), f, t});
  std::copy(first.vec().begin(), first.vec().end(), batch.data());
  for (std::size_t i = 1; i < clips.size(); ++i) {
    Tensorf m = clip_tokens(*clips[i], mel);
    if (m.extent(0) != f || m.extent(1) != t)
      throw ShapeError("tokens_batch: mixed token shapes " + m.shape_str() + " vs " +
                       first.shape_str());
    std::copy(m.vec().begin(), m.vec().end(), batch.data() + i * f * t);
  }
  return batch;
}

StepReport multiview_gradient(AmautModelF& model,
                              const std::vector<std::vector<const AudioClip*>>& view_batches,
                              const std::vector<std::size_t>& labels, const MelParams& mel,
                              RngStream& rng) {
  StepReport report;
  const auto params = model.params();
  // Per-view gradients are reduced in view order outside the model, so the
  // aggregate is exactly the elementwise sum of the per-view gradients.
  std::vector<std::vector<float>> acc(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    acc[i].assign(params[i].grad->numel(), 0.0f);

  for (const auto& view_batch : view_batches) {
    model.zero_grad();
    Tensorf logits =
        model.forward_tokens(tokens_batch(view_batch, mel), Mode::kTrain, &rng);
    Tensorf probs = softmax(logits);
    auto loss = lsr_loss(probs, labels);
    report.view_losses.push_back(loss.value);
    report.total_loss += loss.value;
    if (!std::isfinite(loss.value)) {
      report.skipped = true;
      return report;
    }
    model.backward_tokens(softmax_backward(probs, loss.grad));
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += params[i].grad->vec()[j];
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i].grad->vec() = acc[i];
  return report;
}

StepReport multiview_step(AmautModelF& model, const std::vector<const AudioClip*>& clips,
                          const std::vector<std::size_t>& labels, ViewRecipe recipe,
                          SgdOptimizer<float>& optimizer, const MelParams& mel,
                          const std::vector<AudioClip>& noise_bank, RngStream& rng) {
  // Per-clip view sets first, so view index a of every clip forms one batch.
  std::vector<ViewSet> sets;
  sets.reserve(clips.size());
  for (const auto* clip : clips) sets.push_back(make_view_set(*clip, recipe, rng, noise_bank));
  const std::size_t n_views = sets[0].views.size();

  std::vector<std::vector<const AudioClip*>> view_batches(n_views);
  for (std::size_t a = 0; a < n_views; ++a)
    for (const auto& s : sets) view_batches[a].push_back(&s.views[a]);

  StepReport report = multiview_gradient(model, view_batches, labels, mel, rng);
  if (report.skipped) return report;

  try {
    optimizer.step(model.params());
  } catch (const NonFiniteGradient&) {
    report.skipped = true;
  }
  return report;
}

Tensorf predict_probs(AmautModelF& model, const AudioClip& clip, const MelParams& mel) {
  Tensorf logits = model.forward_tokens(
      tokens_batch({&clip}, mel), Mode::kEval, nullptr);
  Tensorf probs = softmax(logits);
  return probs.reshaped({probs.extent(1)});
}

std::vector<std::size_t> predict_labels(AmautModelF& model, const Dataset& data,
                                        const MelParams& mel) {
  std::vector<std::size_t> preds;
  preds.reserve(data.size());
  const std::size_t chunk = 32;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(start + chunk, data.size());
    std::vector<const AudioClip*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data.clips[i]);
    Tensorf logits = model.forward_tokens(tokens_batch(batch, mel), Mode::kEval, nullptr);
    for (std::size_t i = 0; i < logits.extent(0); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.extent(1); ++c)
        if (logits.at(i, c) > logits.at(i, best)) best = c;
      preds.push_back(best);
    }
  }
  return preds;
}

EvalResult evaluate(AmautModelF& model, const Dataset& data, const MelParams& mel) {
  if (!data.labels_visible())
    throw std::invalid_argument("evaluate: dataset has no labels");
  EvalResult res;
  res.predictions = predict_labels(model, data, mel);
  res.confusion = confusion_matrix(data.labels, res.predictions, data.n_classes);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (res.predictions[i] == data.labels[i]) ++hits;
  res.accuracy = data.size() ? static_cast<double>(hits) / data.size() : 0.0;
  res.per_class_recall.assign(data.n_classes, 0.0);
  for (std::size_t c = 0; c < data.n_classes; ++c) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < data.n_classes; ++j) row += res.confusion.at(c, j);
    if (row) res.per_class_recall[c] = static_cast<double>(res.confusion.at(c, c)) / row;
  }
  return res;
}

TrainResult train_model(const Dataset& train, const Dataset& val, const ModelConfig& cfg,
                        const MelParams& mel, const TrainSettings& settings,
                        const std::vector<AudioClip>& noise_bank,
                        const MetricsSink& sink) {
  if (train.size() == 0) throw std::invalid_argument("train: empty dataset");
  const std::size_t frames = mel_frame_count(
      train.clips[0].frames(), mel.win_samples(train.clips[0].sample_rate),
      mel.hop_samples(train.clips[0].sample_rate));

  TrainResult result;
  result.model = std::make_unique<AmautModelF>(cfg, frames, settings.seed);
  typename SgdOptimizer<float>::Settings opt_settings;
  opt_settings.lr = settings.schedule.lr0;
  SgdOptimizer<float> optimizer(opt_settings);

  // Best-so-far snapshot of all state tensors.
  std::vector<std::vector<float>> best_state;
  auto snapshot = [&] {
    best_state.clear();
    for (auto& [name, tensor] : result.model->state_tensors())
      best_state.push_back(tensor->vec());
  };
  auto restore = [&] {
    std::size_t i = 0;
    for (auto& [name, tensor] : result.model->state_tensors()) tensor->vec() = best_state[i++];
  };
  snapshot();
  result.best_accuracy = -1.0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double initial_loss = -1.0;

  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    optimizer.set_lr(lr_schedule(settings.schedule, epoch));
    RngStream epoch_rng = RngStream::derive(settings.seed, 0x5452, epoch);
    shuffle_indices(order, epoch_rng);

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < train.size(); start += settings.batch_size) {
      const std::size_t end = std::min(start + settings.batch_size, train.size());
      std::vector<const AudioClip*> clips;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        clips.push_back(&train.clips[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      RngStream step_rng = RngStream::derive(settings.seed, epoch + 1, start);
      auto report = multiview_step(*result.model, clips, labels,
                                   settings.recipe, optimizer, mel, noise_bank, step_rng);
      if (!report.skipped) {
        epoch_loss += report.total_loss;
        ++steps;
      }
    }
    if (steps) epoch_loss /= steps;
    if (initial_loss < 0.0) initial_loss = epoch_loss;
    if (std::isfinite(epoch_loss) && epoch_loss > 10.0 * initial_loss && epoch > 0)
      throw DivergenceError("train: loss " + std::to_string(epoch_loss) +
                            " exceeds 10x initial " + std::to_string(initial_loss));

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss;
    m.lr = optimizer.lr();
    if (val.size() > 0) {
      m.val_accuracy = evaluate(*result.model, val, mel).accuracy;
      if (m.val_accuracy > result.best_accuracy) {
        result.best_accuracy = m.val_accuracy;
        result.best_epoch = epoch;
        snapshot();
      }
    } else {
      snapshot();  // no validation split: keep latest
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (sink) sink(m);
    if (settings.target_accuracy >= 0.0 && val.size() > 0 &&
        m.val_accuracy >= settings.target_accuracy)
      break;
  }
  restore();
  return result;
}

AdaptTrace ttda_adapt(AmautModelF& model, const Dataset& test, const TTDAConfig& cfg,
                      const MelParams& mel, std::uint64_t seed) {
  cfg.validate();
  if (test.size() == 0) throw std::invalid_argument("ttda: empty test set");

  typename SgdOptimizer<float>::Settings opt_settings;
  opt_settings.lr = cfg.lr;
  SgdOptimizer<float> optimizer(opt_settings);  // fresh velocity, not training state
  ScheduleParams schedule{cfg.lr, cfg.lambda, cfg.eta};

  AdaptTrace trace;
  double initial = 0.0;

  // Fixed visiting order and per-sample view draws that do not depend on the
  // epoch: every epoch descends on the same finite objective, so the traced
  // per-epoch loss is comparable across epochs.
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    optimizer.set_lr(lr_schedule(schedule, epoch));

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < test.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, test.size());
      RngStream step_rng = RngStream::derive(seed, 0x5454, start);

      model.zero_grad();
      double batch_loss = 0.0;
      std::vector<ViewSet> sets;
      for (std::size_t i = start; i < end; ++i)
        sets.push_back(make_view_set(test.clips[i], ViewRecipe::kTtda2, step_rng));
      for (std::size_t a = 0; a < 2; ++a) {
        std::vector<const AudioClip*> view_batch;
        for (const auto& s : sets) view_batch.push_back(&s.views[a]);
        Tensorf logits = model.forward_tokens(tokens_batch(view_batch, mel),
                                              Mode::kTrain, &step_rng);
        Tensorf probs = softmax(logits);
        auto loss = ttda_loss(probs, cfg);
        batch_loss += loss.value;
        model.backward_tokens(softmax_backward(probs, loss.grad));
      }
      try {
        const auto params = cfg.update_scope == TTDAConfig::UpdateScope::kNormOnly
                                ? model.norm_params()
                                : model.params();
        optimizer.step(params);
      } catch (const NonFiniteGradient&) {
        // leave parameters untouched for this batch
      }
      trace.per_batch_loss.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++batches;
    }
    epoch_loss /= batches;
    trace.per_epoch_loss.push_back(epoch_loss);
    if (epoch == 0) initial = std::abs(epoch_loss);
    if (std::isfinite(epoch_loss) && std::abs(epoch_loss) > 10.0 * initial && epoch > 0 &&
        epoch_loss > 0.0) {
      trace.early_stopped = true;
      break;
    }
  }
  return trace;
}

}  // namespace amaut
