#pragma once

// Central finite-difference check of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "epiorm/nn/ops.hpp"

namespace epiorm::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
};

// Builds the function under test on a fresh tape from the given input Vars.
using GraphBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Reduces the output to a scalar with a fixed random projection, then
// compares d/dx from the tape against (f(x+h) - f(x-h)) / 2h on up to
// `max_coords` randomly chosen input coordinates (all of them when fewer).
// Relative error is |a - n| / max(|a|, |n|, 1e-6); the floor only matters for
// coordinates whose true gradient is at round-off level.
inline GradCheckResult finite_diff_check(const GraphBuilder& build, std::vector<Tensor<double>> inputs,
                                         double h = 1e-5, std::uint64_t seed = 0, std::size_t max_coords = 64,
                                         std::vector<bool> differentiable = {}) {
  if (differentiable.empty()) differentiable.assign(inputs.size(), true);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Tensor<double> projection;
  auto evaluate = [&](bool want_grad, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      vars.push_back(differentiable[i] ? tape.variable(inputs[i]) : tape.constant(inputs[i]));
    Var out = build(tape, vars);
    if (projection.empty()) {
      projection = Tensor<double>(tape.value(out).shape());
      for (auto& v : projection.values()) v = normal(rng);
    }
    Var loss = weighted_sum(tape, out, projection);
    const double value = tape.value(loss)[0];
    if (want_grad) {
      tape.backward(loss);
      for (std::size_t i = 0; i < inputs.size(); ++i)
        grads->push_back(differentiable[i] && tape.has_grad(vars[i]) ? tape.grad(vars[i])
                                                                      : Tensor<double>(inputs[i].shape()));
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (differentiable[i])
      for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > max_coords) coords.resize(max_coords);

  GradCheckResult result;
  for (auto [i, j] : coords) {
    const double orig = inputs[i][j];
    inputs[i][j] = orig + h;
    const double up = evaluate(false, nullptr);
    inputs[i][j] = orig - h;
    const double down = evaluate(false, nullptr);
    inputs[i][j] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i][j];
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
    result.max_abs_error = std::max(result.max_abs_error, abs_err);
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.coords_checked;
  }
  return result;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(normal(rng));
  return t;
}

}  // namespace epiorm::nn
