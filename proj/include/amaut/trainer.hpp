#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "amaut/augment.hpp"
#include "amaut/frontend.hpp"
#include "amaut/losses.hpp"
#include "amaut/model.hpp"
#include "amaut/optim.hpp"

namespace amaut {

struct Dataset {
  std::vector<AudioClip> clips;
  std::vector<std::size_t> labels;  // empty in label-blind (adaptation) mode
  std::size_t n_classes = 0;

  std::size_t size() const { return clips.size(); }
  bool labels_visible() const { return !labels.empty(); }
};

// Converts clips to a float token batch (B, F, T). All clips in a batch must
// produce the same frame count.
Tensorf tokens_batch(const std::vector<const AudioClip*>& clips, const MelParams& mel);

struct StepReport {
  double total_loss = 0.0;
  std::vector<double> view_losses;
  bool skipped = false;  // non-finite loss: no update applied
};

// Leaves the summed multiview gradient in the model: per-view gradients are
// computed independently and reduced in view order, so the aggregate equals
// the elementwise sum of the per-view gradients exactly. view_batches[a]
// holds view a of every clip in the batch.
StepReport multiview_gradient(AmautModelF& model,
                              const std::vector<std::vector<const AudioClip*>>& view_batches,
                              const std::vector<std::size_t>& labels, const MelParams& mel,
                              RngStream& rng);

// One multiview update: the per-view smoothed cross-entropy losses over the
// batch are accumulated into a single gradient, then one optimizer step runs.
StepReport multiview_step(AmautModelF& model, const std::vector<const AudioClip*>& clips,
                          const std::vector<std::size_t>& labels, ViewRecipe recipe,
                          SgdOptimizer<float>& optimizer, const MelParams& mel,
                          const std::vector<AudioClip>& noise_bank, RngStream& rng);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
  ConfusionMatrix confusion;
  std::vector<double> per_class_recall;
};

// Eval-mode accuracy on unaugmented clips.
EvalResult evaluate(AmautModelF& model, const Dataset& data, const MelParams& mel);

std::vector<std::size_t> predict_labels(AmautModelF& model, const Dataset& data,
                                        const MelParams& mel);

// Probability vector (length C) for a single clip, eval mode.
Tensorf predict_probs(AmautModelF& model, const AudioClip& clip, const MelParams& mel);

struct TrainSettings {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  ScheduleParams schedule;
  ViewRecipe recipe = ViewRecipe::kTrain4;
  std::uint64_t seed = 0;
  double target_accuracy = -1.0;  // stop early once validation reaches this
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainResult {
  std::unique_ptr<AmautModelF> model;  // best-validation-accuracy weights
  std::vector<EpochMetrics> history;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

// Full training run: shuffled epochs of multiview steps, per-epoch
// validation on unaugmented clips, best checkpoint retained. All randomness
// derives from settings.seed.
TrainResult train_model(const Dataset& train, const Dataset& val, const ModelConfig& cfg,
                        const MelParams& mel, const TrainSettings& settings,
                        const std::vector<AudioClip>& noise_bank,
                        const MetricsSink& sink = {});

struct AdaptTrace {
  std::vector<double> per_batch_loss;   // epochs * batches entries
  std::vector<double> per_epoch_loss;   // mean combined loss per epoch
  bool early_stopped = false;
};

// Unsupervised test-time adaptation: two shifted views per clip, combined
// entropy objective, SGD with the annealed schedule. Labels are never read;
// the dataset may be label-blind.
AdaptTrace ttda_adapt(AmautModelF& model, const Dataset& test, const TTDAConfig& cfg,
                      const MelParams& mel, std::uint64_t seed);

}  // namespace amaut
