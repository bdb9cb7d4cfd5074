#pragma once

// Finite-difference suite over every differentiable op and a miniature
// network, in double precision. Shared by the `gradcheck` command and the
// acceptance harness.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "epiorm/network.hpp"
#include "epiorm/nn/gradcheck.hpp"

namespace epiorm {

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kNetworkGradTolerance = 1e-3;
// Relative-error floor for the network check. Below it a gradient is at the
// round-off level of a central difference through the whole network, so the
// comparison becomes absolute: |a - n| < 1e-3 * 1e-5.
inline constexpr double kGradFloor = 1e-5;

// Moves biases and batch-norm affine terms off their initial values, so no
// ReLU input sits exactly on the kink through a dead receptive field.
inline void jitter_parameters(Network<double>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (auto& p : net.parameters())
    if (p.name.ends_with(".bias") || p.name.ends_with(".beta") || p.name.ends_with(".gamma"))
      for (auto& v : p.value.values()) v += normal(rng);
}

// The bias feeding a batch normalisation is cancelled by its mean subtraction.
inline bool cancelled_by_batchnorm(const std::string& name) { return name.ends_with(".conv2.bias"); }

struct NetworkGradReport {
  double max_rel = 0.0;       // over coordinates with a non-zero true gradient
  double max_abs_zero = 0.0;  // over biases cancelled by batch normalisation
};

using NetworkGraph = std::function<nn::Var(nn::Tape<double>&, nn::Var)>;

// Central differences over a random subset of the input and of every
// parameter tensor, against the tape gradient of a fixed random projection of
// the output. A probe whose one-sided differences disagree straddles a ReLU
// kink and is repeated with a step ten times smaller, down to h / 100.
// Relative error is floored at kGradFloor. With batch statistics the bias
// feeding each normalisation has a true gradient of zero and is checked in
// absolute terms.
inline NetworkGradReport check_network_gradients(Network<double>& net, const nn::Tensor<double>& input,
                                                 const NetworkGraph& build, std::uint64_t seed, bool batch_stats,
                                                 std::size_t coords_per_tensor = 3, double h = 1e-6) {
  using namespace nn;
  jitter_parameters(net, seed + 1000);
  std::mt19937_64 rng(seed);
  Tensor<double> x = input;
  Tensor<double> proj;
  auto eval = [&](bool grad, Tensor<double>* dx) {
    Tape<double> tape;
    Var xv = tape.variable(x);
    Var out = build(tape, xv);
    if (proj.empty()) proj = random_tensor<double>(tape.value(out).shape(), rng);
    Var loss = weighted_sum(tape, out, proj);
    if (grad) {
      net.zero_grad();
      tape.backward(loss);
      *dx = tape.has_grad(xv) ? tape.grad(xv) : Tensor<double>(x.shape());
    }
    return tape.value(loss)[0];
  };
  Tensor<double> dx;
  const double base = eval(true, &dx);
  std::vector<Tensor<double>> analytic;
  for (auto& p : net.parameters()) analytic.push_back(p.grad);

  NetworkGradReport r;
  auto probe = [&](double& slot, double a, bool zero_expected) {
    const double orig = slot;
    double step = h, n = 0.0;
    for (int attempt = 0;; ++attempt) {
      slot = orig + step;
      const double up = eval(false, nullptr);
      slot = orig - step;
      const double down = eval(false, nullptr);
      slot = orig;
      n = (up - down) / (2 * step);
      const double fwd = (up - base) / step, bwd = (base - down) / step;
      const double scale = std::max(std::abs(fwd), std::abs(bwd));
      const bool kink = scale > kGradFloor && std::abs(fwd - bwd) > kNetworkGradTolerance * scale;
      if (!kink || zero_expected || attempt == 2) break;
      step /= 10;
    }
    if (zero_expected)
      r.max_abs_zero = std::max(r.max_abs_zero, std::max(std::abs(a), std::abs(n)));
    else
      r.max_rel = std::max(r.max_rel, std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradFloor}));
  };
  auto pick = [&](std::size_t size) { return std::uniform_int_distribution<std::size_t>(0, size - 1)(rng); };
  for (std::size_t k = 0; k < coords_per_tensor; ++k) {
    const std::size_t j = pick(x.size());
    probe(x[j], dx[j], false);
  }
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    auto& p = net.parameters()[i];
    for (std::size_t k = 0; k < coords_per_tensor; ++k) {
      const std::size_t j = pick(p.value.size());
      probe(p.value[j], analytic[i][j], batch_stats && cancelled_by_batchnorm(p.name));
    }
  }
  return r;
}

struct GradSuiteEntry {
  std::string name;
  double max_error = 0.0;  // worst relative error over all seeds
  double tolerance = 0.0;
  int seeds = 0;
  double seconds = 0.0;
  bool passed() const { return max_error < tolerance; }
};

// Tiny network used by the end-to-end check: 9x29x3 patches, width 4.
inline NetworkConfig gradcheck_network_config() {
  NetworkConfig c;
  c.width = 4;
  c.orm_channels = 3;
  return c;
}

// One entry per op plus the composed network; `seeds` random draws each.
inline std::vector<GradSuiteEntry> run_gradient_suite(int seeds = 20,
                                                      const std::function<void(const GradSuiteEntry&)>& on_entry = {}) {
  using namespace nn;
  using Inputs = std::vector<Tensor<double>>;
  std::vector<GradSuiteEntry> out;
  auto run = [&](const std::string& name, double tol, const std::function<double(std::uint64_t)>& one) {
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteEntry e{name, 0.0, tol, seeds, 0.0};
    for (int s = 0; s < seeds; ++s) e.max_error = std::max(e.max_error, one(static_cast<std::uint64_t>(s)));
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(e);
    if (on_entry) on_entry(e);
  };
  auto op = [&](const std::string& name, const GraphBuilder& build,
                const std::function<Inputs(std::mt19937_64&)>& inputs) {
    run(name, kOpGradTolerance, [&](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      // the projection needs its own stream: drawn from the input's stream it
      // equals the input, and batch normalisation then has a near-zero true
      // gradient that only finite-difference noise can measure
      return finite_diff_check(build, inputs(rng), 1e-5, seed ^ 0x9e3779b97f4a7c15ull).max_rel_error;
    });
  };
  auto dim = [](std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  op("conv2d_valid", [](Tape<double>& t, const std::vector<Var>& v) { return conv2d_valid(t, v[0], v[1], v[2]); },
     [&](std::mt19937_64& rng) {
       const int kh = dim(rng, 1, 2), kw = dim(rng, 1, 2), ci = dim(rng, 1, 4), co = dim(rng, 1, 4);
       return Inputs{random_tensor<double>({dim(rng, 1, 3), kh + dim(rng, 0, 3), kw + dim(rng, 0, 3), ci}, rng),
                     random_tensor<double>({kh, kw, ci, co}, rng), random_tensor<double>({co}, rng)};
     });
  op("relu", [](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); },
     [](std::mt19937_64& rng) { return Inputs{random_tensor<double>({2, 3, 4, 2}, rng)}; });
  op("add", [](Tape<double>& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); },
     [](std::mt19937_64& rng) {
       return Inputs{random_tensor<double>({2, 3, 4, 2}, rng), random_tensor<double>({2, 3, 4, 2}, rng)};
     });
  op("center_slice", [](Tape<double>& t, const std::vector<Var>& v) { return center_slice(t, v[0], 3, 5); },
     [](std::mt19937_64& rng) { return Inputs{random_tensor<double>({2, 5, 9, 2}, rng)}; });
  op("concat_channels", [](Tape<double>& t, const std::vector<Var>& v) { return concat_channels(t, v[0], v[1]); },
     [](std::mt19937_64& rng) {
       return Inputs{random_tensor<double>({2, 3, 4, 2}, rng), random_tensor<double>({2, 3, 4, 3}, rng)};
     });
  op("matmul", [](Tape<double>& t, const std::vector<Var>& v) { return matmul(t, v[0], v[1]); },
     [&](std::mt19937_64& rng) {
       const int m = dim(rng, 1, 6), k = dim(rng, 1, 6), n = dim(rng, 1, 6);
       return Inputs{random_tensor<double>({m, k}, rng), random_tensor<double>({k, n}, rng)};
     });
  op("transpose", [](Tape<double>& t, const std::vector<Var>& v) { return transpose(t, v[0]); },
     [](std::mt19937_64& rng) { return Inputs{random_tensor<double>({3, 5}, rng)}; });
  op("reshape", [](Tape<double>& t, const std::vector<Var>& v) { return reshape(t, v[0], Shape{6, 4}); },
     [](std::mt19937_64& rng) { return Inputs{random_tensor<double>({2, 3, 4}, rng)}; });
  op("center_row_relation",
     [](Tape<double>& t, const std::vector<Var>& v) { return center_row_relation(t, v[0], v[1]); },
     [](std::mt19937_64& rng) {
       return Inputs{random_tensor<double>({2, 3, 5, 2}, rng), random_tensor<double>({2, 3, 5, 2}, rng)};
     });
  for (Mode mode : {Mode::train, Mode::eval}) {
    BatchNormState<double> st(3);
    st.running_mean = Tensor<double>({3}, {0.1, -0.2, 0.3});
    st.running_var = Tensor<double>({3}, {0.5, 1.5, 2.0});
    st.updates = 1;
    op(mode == Mode::train ? "batchnorm_train" : "batchnorm_eval",
       [&st, mode](Tape<double>& t, const std::vector<Var>& v) {
         BatchNormState<double> copy = st;  // finite differences must not move the statistics
         return batchnorm(t, v[0], v[1], v[2], copy, mode);
       },
       [](std::mt19937_64& rng) {
         return Inputs{random_tensor<double>({3, 2, 3, 3}, rng), random_tensor<double>({3}, rng),
                       random_tensor<double>({3}, rng)};
       });
  }
  op("mae_loss", [](Tape<double>& t, const std::vector<Var>& v) { return mae_loss(t, v[0], v[1]); },
     [](std::mt19937_64& rng) {
       return Inputs{random_tensor<double>({8, 1}, rng), random_tensor<double>({8, 1}, rng)};
     });

  const NetworkConfig cfg = gradcheck_network_config();
  for (Mode mode : {Mode::train, Mode::eval}) {
    run(mode == Mode::train ? "network_train_mode" : "network_eval_mode", kNetworkGradTolerance,
        [&](std::uint64_t seed) {
          Network<double> net(cfg, seed + 100);
          std::mt19937_64 rng(seed + 200);
          const auto ph = random_tensor<double>({4, cfg.H, cfg.W, cfg.C}, rng);
          const auto pv = random_tensor<double>({4, cfg.H, cfg.W, cfg.C}, rng);
          for (auto& s : net.bn_states()) {
            s.running_mean = random_tensor<double>(s.running_mean.shape(), rng, 0.1);
            for (auto& v : s.running_var.values()) v = 0.5 + std::abs(v);
            s.updates = 1;
          }
          const auto r = check_network_gradients(
              net, ph, [&](Tape<double>& t, Var v) { return net.forward(t, v, t.constant(pv), mode); }, seed,
              mode == Mode::train, 1);
          // a cancelled bias must show no gradient either way
          return r.max_abs_zero < 1e-6 ? r.max_rel : std::max(r.max_rel, 1.0);
        });
  }
  return out;
}

}  // namespace epiorm
