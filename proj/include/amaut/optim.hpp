#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "amaut/ops.hpp"
#include "amaut/tensor.hpp"

namespace amaut {

struct ScheduleParams {
  double lr0 = 1e-3;
  double lambda = 10.0;  // rate of change
  double eta = 40.0;     // cardinality: epochs after which the rate freezes
};

// Annealed rate lr0 / (1 + lambda * e / eta)^0.75 for e < eta, frozen at the
// e = eta-1 value afterwards. Strictly decreasing on [0, eta).
inline double lr_schedule(const ScheduleParams& p, std::size_t epoch) {
  const double e = std::min(static_cast<double>(epoch), p.eta - 1.0);
  return p.lr0 / std::pow(1.0 + p.lambda * e / p.eta, 0.75);
}

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& name)
      : std::runtime_error("non-finite gradient in " + name) {}
};

// SGD with L2 weight decay, momentum and Nesterov acceleration:
//   g <- g + wd * p;  v <- mu * v + g;  p <- p - lr * (g + mu * v)
template <typename T>
class SgdOptimizer {
 public:
  struct Settings {
    double lr = 1e-3;
    double weight_decay = 1e-3;
    double momentum = 0.9;
    bool nesterov = true;
  };

  explicit SgdOptimizer(Settings s = {}) : s_(s) {
    if (s_.lr <= 0) throw std::invalid_argument("sgd: lr must be positive");
  }

  void set_lr(double lr) { s_.lr = lr; }
  double lr() const { return s_.lr; }
  const Settings& settings() const { return s_; }

  // Throws NonFiniteGradient before touching any parameter, so an aborted
  // step leaves the model untouched.
  void step(const ParamList<T>& params) {
    for (const auto& p : params)
      for (const auto& g : p.grad->vec())
        if (!std::isfinite(static_cast<double>(g))) throw NonFiniteGradient(p.name);

    for (const auto& p : params) {
      auto& v = velocity_[p.name];
      if (v.numel() != p.value->numel()) v = Tensor<T>(p.value->shape());
      for (std::size_t i = 0; i < p.value->numel(); ++i) {
        double g = (*p.grad)[i];
        g += s_.weight_decay * (*p.value)[i];
        double vel = s_.momentum * v[i] + g;
        v[i] = static_cast<T>(vel);
        const double update = s_.nesterov ? g + s_.momentum * vel : vel;
        (*p.value)[i] = static_cast<T>((*p.value)[i] - s_.lr * update);
      }
    }
  }

  static void zero_grad(const ParamList<T>& params) {
    for (const auto& p : params) p.grad->fill(T(0));
  }

 private:
  Settings s_;
  std::unordered_map<std::string, Tensor<T>> velocity_;
};

}  // namespace amaut
