#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "amaut/gradcheck.hpp"
#include "amaut/losses.hpp"
#include "amaut/ops.hpp"

using namespace amaut;

namespace {

Tensord uniform_probs(std::size_t b, std::size_t c) {
  return Tensord::full({b, c}, 1.0 / static_cast<double>(c));
}

Tensord random_probs(std::size_t b, std::size_t c, std::uint64_t seed) {
  RngStream rng(seed);
  Tensord logits({b, c});
  for (auto& v : logits.vec()) v = 2.0 * rng.normal();
  return softmax(logits);
}

// Checks d(loss)/d(logits) for a probability-space loss by composing with
// softmax, so the finite differences stay on the simplex.
template <typename LossFn>
void check_through_softmax(LossFn&& loss_fn, std::size_t b, std::size_t c,
                           std::uint64_t seed) {
  RngStream rng(seed);
  GradChecker checker;
  auto report = checker.check(
      [&](const Tensord& x) {
        auto res = loss_fn(softmax(x));
        return Tensord({1}, {res.value});
      },
      [&](const Tensord& x, const Tensord& dy) {
        Tensord probs = softmax(x);
        auto res = loss_fn(probs);
        Tensord dprobs = res.grad;
        for (auto& v : dprobs.vec()) v *= dy[0];
        return softmax_backward(probs, dprobs);
      },
      {b, c}, rng);
  INFO(report.detail);
  CHECK(report.pass);
}

}  // namespace

TEST_CASE("closed-form loss values") {
  // Entropy of the uniform distribution over 4 classes.
  CHECK(en_loss(uniform_probs(3, 4)).value == doctest::Approx(std::log(4.0)).epsilon(1e-5));
  // Tsallis entropy of uniform over 2 classes at q = 1.1.
  const double expect_gen = (1.0 - std::pow(2.0, -0.1)) / 0.1;
  CHECK(gen_loss(uniform_probs(5, 2), 1.1).value ==
        doctest::Approx(expect_gen).epsilon(1e-9));
  // One-hot rows: Frobenius norm sqrt(B) -> -sqrt(B)/(B*C) = -1/(sqrt(B)*C).
  Tensord onehot({4, 10});
  for (std::size_t j = 0; j < 4; ++j) onehot.at(j, j % 10) = 1.0;
  CHECK(nm_loss(onehot).value == doctest::Approx(-0.05).epsilon(1e-9));
  // Smoothed cross-entropy against uniform predictions is log C regardless
  // of labels or smoothing weight.
  CHECK(lsr_loss(uniform_probs(6, 2), {0, 1, 0, 1, 1, 0}).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("lsr matches an independent brute-force evaluation") {
  Tensord probs = random_probs(4, 5, 3);
  const std::vector<std::size_t> labels{2, 0, 4, 1};
  auto res = lsr_loss(probs, labels);
  double want = 0.0;
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 5; ++i) {
      const double w = (i == labels[j] ? 0.9 : 0.0) + 0.1 / 5.0;
      want -= w * std::log(probs.at(j, i));
    }
  want /= 4.0;
  CHECK(res.value == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(lsr_loss(probs, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(lsr_loss(probs, {0, 1, 2, 9}), std::invalid_argument);

  // Exact zeros are clamped and counted rather than producing inf.
  Tensord degenerate({1, 2}, {1.0, 0.0});
  std::size_t clamps = 0;
  auto res2 = lsr_loss(degenerate, {0}, &clamps);
  CHECK(clamps == 1);
  CHECK(std::isfinite(res2.value));
}

TEST_CASE("loss signs and extremes") {
  Tensord spread = random_probs(6, 4, 7);
  CHECK(en_loss(spread).value > 0.0);
  CHECK(gen_loss(spread, 1.1).value > 0.0);
  CHECK(nm_loss(spread).value < 0.0);

  // Confidence minimises entropy-style losses and the nuclear surrogate.
  Tensord onehot({6, 4});
  for (std::size_t j = 0; j < 6; ++j) onehot.at(j, j % 4) = 1.0;
  CHECK(en_loss(onehot).value < en_loss(spread).value);
  CHECK(en_loss(spread).value <= en_loss(uniform_probs(6, 4)).value + 1e-12);
  CHECK(gen_loss(onehot, 1.1).value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(nm_loss(onehot).value < nm_loss(spread).value);

  CHECK_THROWS_AS(gen_loss(spread, 1.0), std::invalid_argument);
}

TEST_CASE("loss gradients through the softmax reparameterisation") {
  check_through_softmax([](const Tensord& p) { return nm_loss(p); }, 3, 5, 11);
  check_through_softmax([](const Tensord& p) { return en_loss(p); }, 3, 5, 13);
  check_through_softmax([](const Tensord& p) { return gen_loss(p, 1.1); }, 3, 5, 17);
  check_through_softmax([](const Tensord& p) { return gen_loss(p, 0.8); }, 3, 5, 19);
  check_through_softmax(
      [](const Tensord& p) { return lsr_loss(p, std::vector<std::size_t>{1, 0, 3}); },
      3, 5, 23);
  TTDAConfig cfg;
  check_through_softmax([&](const Tensord& p) { return ttda_loss(p, cfg); }, 3, 5, 29);
}

TEST_CASE("combined objective is the weighted sum of its parts") {
  TTDAConfig cfg;
  cfg.alpha = 0.7;
  cfg.beta = 0.2;
  cfg.gamma = 1.3;
  cfg.q = 1.1;
  Tensord probs = random_probs(4, 6, 31);
  auto combined = ttda_loss(probs, cfg);
  auto nm = nm_loss(probs);
  auto en = en_loss(probs);
  auto gen = gen_loss(probs, cfg.q);
  CHECK(combined.value ==
        doctest::Approx(0.7 * nm.value + 0.2 * en.value + 1.3 * gen.value)
            .epsilon(1e-12));
  for (std::size_t i = 0; i < probs.numel(); ++i)
    CHECK(combined.grad[i] ==
          doctest::Approx(0.7 * nm.grad[i] + 0.2 * en.grad[i] + 1.3 * gen.grad[i])
              .epsilon(1e-12));

  TTDAConfig zero;
  zero.alpha = zero.beta = zero.gamma = 0.0;
  CHECK_THROWS_AS(zero.validate(), std::invalid_argument);
  TTDAConfig pole;
  pole.q = 1.0;
  CHECK_THROWS_AS(pole.validate(), std::invalid_argument);
  pole.gamma = 0.0;
  CHECK_NOTHROW(pole.validate());  // the q pole is harmless with gamma off
}

TEST_CASE("refinement spec validation") {
  RefinementSpec spec;
  spec.method = RefineMethod::kAug;
  spec.views = 3;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.views = 2;
  CHECK_NOTHROW(spec.validate());
  spec.method = RefineMethod::kMlt;
  spec.models = 2;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.models = 3;
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("refinement averages exactly as enumerated") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(1600, 0.1f);

  // Fixed-output predictors make every average enumerable by hand.
  auto fixed = [](std::vector<float> p) {
    return [p](const AudioClip&) {
      return Tensorf({p.size()}, std::vector<float>(p));
    };
  };
  std::vector<Predictor<float>> models{fixed({0.8f, 0.1f, 0.1f}),
                                       fixed({0.2f, 0.5f, 0.3f}),
                                       fixed({0.0f, 0.4f, 0.6f})};

  Tensorf mlt = mlt_refine(models, clip);
  CHECK(mlt[0] == doctest::Approx((0.8 + 0.2 + 0.0) / 3).epsilon(1e-6));
  CHECK(mlt[1] == doctest::Approx((0.1 + 0.5 + 0.4) / 3).epsilon(1e-6));
  CHECK(mlt[2] == doctest::Approx((0.1 + 0.3 + 0.6) / 3).epsilon(1e-6));

  // Input-independent predictors: aug_refine over any number of views is the
  // prediction itself, and hybrid over the ensemble equals mlt.
  RngStream rng(5);
  Tensorf aug = aug_refine(models[0], clip, 4, rng);
  CHECK(aug[0] == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(aug[1] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(aug[2] == doctest::Approx(0.1).epsilon(1e-6));

  Tensorf hyb = hyb_refine(models, clip, 2, rng);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(hyb[i] == doctest::Approx(mlt[i]).epsilon(1e-6));

  // Hybrid with one model consumes the same draws as plain aug_refine.
  RngStream r1(9), r2(9);
  std::vector<Predictor<float>> one{models[1]};
  Tensorf h1 = hyb_refine(one, clip, 2, r1);
  Tensorf a1 = aug_refine(models[1], clip, 2, r2);
  CHECK(h1.vec() == a1.vec());

  CHECK_THROWS_AS(mlt_refine(std::vector<Predictor<float>>{}, clip), EnsembleError);
  std::vector<Predictor<float>> mismatched{fixed({0.5f, 0.5f}), fixed({1.0f, 0.0f, 0.0f})};
  CHECK_THROWS_AS(mlt_refine(mismatched, clip), EnsembleError);
}

TEST_CASE("refined outputs stay on the simplex for real prediction shapes") {
  AudioClip clip;
  clip.sample_rate = 8000;
  clip.samples.resize(800);
  RngStream wave(3);
  for (auto& s : clip.samples) s = static_cast<float>(wave.uniform(-0.5, 0.5));

  // A predictor that actually depends on the clip content.
  auto content = [](const AudioClip& c) {
    Tensorf logits({3});
    for (std::size_t i = 0; i < c.samples.size(); ++i)
      logits[i % 3] += c.samples[i];
    return softmax(logits);
  };
  std::vector<Predictor<float>> models{content, content, content};

  RngStream rng(7);
  for (Tensorf probs : {aug_refine<float>(content, clip, 4, rng),
                        mlt_refine<float>(models, clip),
                        hyb_refine<float>(models, clip, 2, rng)}) {
    double sum = 0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
      CHECK(probs[i] >= 0.0f);
      sum += probs[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("agreement equals a brute-force tally") {
  RngStream rng(41);
  const std::size_t n = 1000, c = 7;
  std::vector<std::size_t> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.uniform_index(c);
    b[i] = rng.uniform_index(c);
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i) same += a[i] == b[i];
  CHECK(agreement_rate(a, b, c) == static_cast<double>(same) / n);
  CHECK(agreement_rate(a, a, c) == 1.0);
  CHECK(agreement_rate(a, b, c) == agreement_rate(b, a, c));

  ConfusionMatrix cm = confusion_matrix(a, b, c);
  CHECK(cm.total() == n);
  std::size_t diag = 0;
  for (std::size_t i = 0; i < c; ++i) diag += cm.at(i, i);
  CHECK(diag == same);

  CHECK_THROWS_AS(confusion_matrix(a, {0, 1}, c), std::invalid_argument);
  std::vector<std::size_t> bad = b;
  bad[0] = c;
  CHECK_THROWS_AS(confusion_matrix(a, bad, c), std::invalid_argument);
}
