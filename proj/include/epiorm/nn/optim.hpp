#pragma once

#include <cmath>
#include <vector>

#include "epiorm/nn/tape.hpp"

namespace epiorm::nn {

struct RMSpropConfig {
  double lr = 1e-4;
  double rho = 0.9;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// v <- rho v + (1 - rho) g^2
// p <- p - lr g / (sqrt(v) + eps) - lr weight_decay p
template <typename T>
class RMSprop {
 public:
  explicit RMSprop(RMSpropConfig cfg = {}) : cfg_(cfg) {}

  const RMSpropConfig& config() const { return cfg_; }
  long steps() const { return steps_; }
  const std::vector<Tensor<T>>& square_averages() const { return sq_; }

  void step(std::vector<Parameter<T>>& params) { step(params, cfg_.lr); }

  void step(std::vector<Parameter<T>>& params, double lr) {
    if (sq_.empty())
      for (const auto& p : params) sq_.emplace_back(p.value.shape());
    if (sq_.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    const T rho = T(cfg_.rho), eps = T(cfg_.eps), wd = T(cfg_.weight_decay), rate = T(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* p = params[i].value.data();
      const T* g = params[i].grad.data();
      T* v = sq_[i].data();
      for (std::size_t j = 0; j < params[i].value.size(); ++j) {
        v[j] = rho * v[j] + (T(1) - rho) * g[j] * g[j];
        p[j] = p[j] - rate * g[j] / (std::sqrt(v[j]) + eps) - rate * wd * p[j];
      }
    }
    ++steps_;
  }

 private:
  RMSpropConfig cfg_;
  std::vector<Tensor<T>> sq_;
  long steps_ = 0;
};

// Base rate halved every `interval` iterations (interval <= 0 keeps it flat).
inline double step_decay_lr(double base, long iteration, long interval) {
  if (interval <= 0) return base;
  return base * std::pow(0.5, static_cast<double>(iteration / interval));
}

}  // namespace epiorm::nn
