#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "amaut/audio.hpp"
#include "amaut/augment.hpp"
#include "amaut/tensor.hpp"

namespace amaut {

// Rows of a (B, C) probability batch must sum to 1; the losses below take
// softmax outputs, never raw logits.

constexpr double kLsrEpsilon = 0.1;    // label smoothing weight
constexpr double kLsrLogClamp = 1e-12; // guard for log at exact zero
constexpr double kEntropyEps = 1e-6;   // additive guard inside the EN log

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // d(loss)/d(probs), same shape as the input batch
};

// Smoothed cross-entropy: -(1/B) sum_j sum_i [(1-eps) p + eps/C] log p_hat.
template <typename T>
LossResult<T> lsr_loss(const Tensor<T>& probs, const std::vector<std::size_t>& labels,
                       std::size_t* clamp_warnings = nullptr) {
  const std::size_t b = probs.extent(0), c = probs.extent(1);
  if (labels.size() != b)
    throw std::invalid_argument("lsr_loss: batch/label count mismatch");
  LossResult<T> res;
  res.grad = Tensor<T>(probs.shape());
  double total = 0.0;
  std::size_t clamps = 0;
  for (std::size_t j = 0; j < b; ++j) {
    if (labels[j] >= c) throw std::invalid_argument("lsr_loss: label out of range");
    for (std::size_t i = 0; i < c; ++i) {
      const double w = (i == labels[j] ? 1.0 - kLsrEpsilon : 0.0) + kLsrEpsilon / c;
      double p = probs.at(j, i);
      if (p < kLsrLogClamp) {
        p = kLsrLogClamp;
        ++clamps;
      }
      total -= w * std::log(p);
      res.grad.at(j, i) = static_cast<T>(-w / (p * b));
    }
  }
  if (clamp_warnings) *clamp_warnings += clamps;
  res.value = total / b;
  return res;
}

// Nuclear-norm surrogate: -(1/(B*C)) * ||probs||_F.
template <typename T>
LossResult<T> nm_loss(const Tensor<T>& probs) {
  const std::size_t b = probs.extent(0), c = probs.extent(1);
  double sq = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i)
    sq += static_cast<double>(probs[i]) * probs[i];
  const double fro = std::sqrt(sq);
  LossResult<T> res;
  res.value = -fro / (b * c);
  res.grad = Tensor<T>(probs.shape());
  if (fro > 0.0) {
    const double k = -1.0 / (b * c * fro);
    for (std::size_t i = 0; i < probs.numel(); ++i)
      res.grad[i] = static_cast<T>(k * probs[i]);
  }
  return res;
}

// Shannon entropy with an epsilon-guarded log.
template <typename T>
LossResult<T> en_loss(const Tensor<T>& probs) {
  const std::size_t b = probs.extent(0);
  LossResult<T> res;
  res.grad = Tensor<T>(probs.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const double p = probs[i];
    total -= p * std::log(p + kEntropyEps);
    res.grad[i] = static_cast<T>(-(std::log(p + kEntropyEps) + p / (p + kEntropyEps)) / b);
  }
  res.value = total / b;
  return res;
}

// Generalized (Tsallis) entropy: (1/B) sum_j (1 - sum_i p^q) / (q - 1).
template <typename T>
LossResult<T> gen_loss(const Tensor<T>& probs, double q) {
  if (q == 1.0) throw std::invalid_argument("gen_loss: q = 1 is a pole");
  const std::size_t b = probs.extent(0);
  LossResult<T> res;
  res.grad = Tensor<T>(probs.shape());
  double total = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    double sum_q = 0.0;
    for (std::size_t i = 0; i < probs.extent(1); ++i) {
      const double p = probs.at(j, i);
      sum_q += std::pow(p, q);
      res.grad.at(j, i) =
          static_cast<T>(-q * std::pow(p, q - 1.0) / (b * (q - 1.0)));
    }
    total += (1.0 - sum_q) / (q - 1.0);
  }
  res.value = total / b;
  return res;
}

struct TTDAConfig {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 0.5;
  double q = 1.1;
  double lr = 1e-3;
  double lambda = 10.0;
  double eta = 40.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  enum class UpdateScope { kAll, kNormOnly } update_scope = UpdateScope::kAll;

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0)
      throw std::invalid_argument("ttda: loss weights must be >= 0");
    if (alpha == 0 && beta == 0 && gamma == 0)
      throw std::invalid_argument("ttda: at least one loss weight must be positive");
    if (gamma != 0 && q == 1.0) throw std::invalid_argument("ttda: q = 1 is a pole");
  }
};

// Combined adaptation objective alpha*NM + beta*EN + gamma*GEN.
template <typename T>
LossResult<T> ttda_loss(const Tensor<T>& probs, const TTDAConfig& cfg) {
  LossResult<T> res;
  res.grad = Tensor<T>(probs.shape());
  if (cfg.alpha != 0.0) {
    auto nm = nm_loss(probs);
    res.value += cfg.alpha * nm.value;
    for (std::size_t i = 0; i < probs.numel(); ++i)
      res.grad[i] += static_cast<T>(cfg.alpha * nm.grad[i]);
  }
  if (cfg.beta != 0.0) {
    auto en = en_loss(probs);
    res.value += cfg.beta * en.value;
    for (std::size_t i = 0; i < probs.numel(); ++i)
      res.grad[i] += static_cast<T>(cfg.beta * en.grad[i]);
  }
  if (cfg.gamma != 0.0) {
    auto gen = gen_loss(probs, cfg.q);
    res.value += cfg.gamma * gen.value;
    for (std::size_t i = 0; i < probs.numel(); ++i)
      res.grad[i] += static_cast<T>(cfg.gamma * gen.grad[i]);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Prediction-time refinement. These average probability vectors and never
// touch model parameters; the model enters only through the predictor
// callable (clip -> probability vector of length C).

enum class RefineMethod { kNone, kAug, kMlt, kHyb };

struct RefinementSpec {
  RefineMethod method = RefineMethod::kNone;
  std::size_t views = 2;   // A, even
  std::size_t models = 3;  // M, odd
  std::vector<std::string> checkpoint_paths;

  void validate() const {
    if (method == RefineMethod::kAug || method == RefineMethod::kHyb)
      if (views % 2 != 0) throw std::invalid_argument("refine: A must be even");
    if (method == RefineMethod::kMlt || method == RefineMethod::kHyb)
      if (models % 2 != 1) throw std::invalid_argument("refine: M must be odd");
  }
};

class EnsembleError : public std::runtime_error {
 public:
  explicit EnsembleError(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
using Predictor = std::function<Tensor<T>(const AudioClip&)>;

// Mean over the original clip plus A time-shifted views (alternating right
// and left, fractions drawn from U(0, 0.17)).
template <typename T>
Tensor<T> aug_refine(const Predictor<T>& predict, const AudioClip& clip, std::size_t a,
                     RngStream& rng) {
  Tensor<T> acc = predict(clip);
  for (std::size_t i = 0; i < a; ++i) {
    const auto dir = i % 2 == 0 ? ShiftDirection::kRight : ShiftDirection::kLeft;
    Tensor<T> p = predict(time_shift(clip, rng.uniform(0.0, kMaxShiftFrac), dir));
    if (!p.same_shape(acc)) throw EnsembleError("aug_refine: class count mismatch");
    for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += p[j];
  }
  const T inv = T(1) / static_cast<T>(a + 1);
  for (auto& v : acc.vec()) v *= inv;
  return acc;
}

template <typename T>
Tensor<T> mlt_refine(const std::vector<Predictor<T>>& predictors, const AudioClip& clip) {
  if (predictors.empty()) throw EnsembleError("mlt_refine: no models");
  Tensor<T> acc = predictors[0](clip);
  for (std::size_t m = 1; m < predictors.size(); ++m) {
    Tensor<T> p = predictors[m](clip);
    if (!p.same_shape(acc)) throw EnsembleError("mlt_refine: class count mismatch");
    for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += p[j];
  }
  const T inv = T(1) / static_cast<T>(predictors.size());
  for (auto& v : acc.vec()) v *= inv;
  return acc;
}

template <typename T>
Tensor<T> hyb_refine(const std::vector<Predictor<T>>& predictors, const AudioClip& clip,
                     std::size_t a, RngStream& rng) {
  if (predictors.empty()) throw EnsembleError("hyb_refine: no models");
  Tensor<T> acc = aug_refine(predictors[0], clip, a, rng);
  for (std::size_t m = 1; m < predictors.size(); ++m) {
    Tensor<T> p = aug_refine(predictors[m], clip, a, rng);
    if (!p.same_shape(acc)) throw EnsembleError("hyb_refine: class count mismatch");
    for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += p[j];
  }
  const T inv = T(1) / static_cast<T>(predictors.size());
  for (auto& v : acc.vec()) v *= inv;
  return acc;
}

// ---------------------------------------------------------------------------
// Agreement between two prediction vectors (consistency metric).

struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;  // row-major C x C

  std::size_t& at(std::size_t i, std::size_t j) { return counts[i * n_classes + j]; }
  std::size_t at(std::size_t i, std::size_t j) const { return counts[i * n_classes + j]; }
  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& a,
                                        const std::vector<std::size_t>& b,
                                        std::size_t n_classes) {
  if (a.size() != b.size())
    throw std::invalid_argument("confusion_matrix: prediction length mismatch");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.counts.assign(n_classes * n_classes, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] >= n_classes || b[i] >= n_classes)
      throw std::invalid_argument("confusion_matrix: prediction out of range");
    ++cm.at(a[i], b[i]);
  }
  return cm;
}

// Trace mass over total mass of the cross-model confusion matrix.
inline double agreement_rate(const std::vector<std::size_t>& a,
                             const std::vector<std::size_t>& b, std::size_t n_classes) {
  const ConfusionMatrix cm = confusion_matrix(a, b, n_classes);
  std::size_t diag = 0;
  for (std::size_t i = 0; i < n_classes; ++i) diag += cm.at(i, i);
  const std::size_t total = cm.total();
  return total == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(total);
}

}  // namespace amaut
