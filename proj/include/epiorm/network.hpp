#pragma once

// Two-branch (horizontal / vertical EPI) disparity regressor built around the
// Oriented Relation Module.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "epiorm/lightfield.hpp"
#include "epiorm/nn/ops.hpp"

namespace epiorm {

using nn::BatchNormState;
using nn::Mode;
using nn::Parameter;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct Kernel {
  int h = 1;
  int w = 1;
  bool operator==(const Kernel&) const = default;
};
using KernelPair = std::pair<Kernel, Kernel>;

struct NetworkConfig {
  int H = 9;
  int W = 29;
  int C = 3;
  int branches = 2;
  int num_orms = 2;          // 0 disables the relation modules
  int orm_channels = 16;     // embedding width of the 1x1 relation convs
  bool orm_bias = true;
  int width = 32;            // channels of every branch / merge conv
  std::vector<KernelPair> conv_blocks = std::vector<KernelPair>(7, {{2, 2}, {1, 2}});
  std::vector<KernelPair> residual_blocks = std::vector<KernelPair>(6, {{1, 2}, {1, 2}});
  KernelPair merge_block = {{2, 2}, {1, 2}};
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;

  // Spatial size after the conv and residual stacks.
  std::pair<int, int> feature_size() const {
    int h = H, w = W;
    for (const auto& [a, b] : conv_blocks) {
      h -= a.h + b.h - 2;
      w -= a.w + b.w - 2;
    }
    for (const auto& [a, b] : residual_blocks) {
      h -= a.h + b.h - 2;
      w -= a.w + b.w - 2;
    }
    return {h, w};
  }

  void validate() const {
    if (H < 1 || W < 1 || H % 2 == 0 || W % 2 == 0) throw ArgumentError("network input H and W must be odd");
    if (C != 1 && C != 3) throw ArgumentError("network input channels must be 1 or 3");
    if (orm_channels < 1 || width < 1 || num_orms < 0 || branches < 1)
      throw ArgumentError("network widths must be positive");
    auto [h, w] = feature_size();
    if (h < 1 || w < 1) throw ShapeError("kernel schedule shrinks the patch below 1x1");
    for (const auto& [a, b] : residual_blocks)
      if ((a.h + b.h - 2) % 2 || (a.w + b.w - 2) % 2)
        throw ShapeError("residual block kernels must shrink each axis by an even amount");
    const int mh = h - (merge_block.first.h + merge_block.second.h - 2);
    const int mw = w - (merge_block.first.w + merge_block.second.w - 2);
    if (mh != 1 || mw != 1)
      throw ShapeError("kernel schedule must reduce the patch to 1x1 at the merge block, got " + std::to_string(mh) +
                       "x" + std::to_string(mw));
  }

  int branch_input_channels() const { return C + num_orms * W; }
};

inline void to_json(nlohmann::json& j, const Kernel& k) { j = nlohmann::json::array({k.h, k.w}); }
inline void from_json(const nlohmann::json& j, Kernel& k) {
  k.h = j.at(0).get<int>();
  k.w = j.at(1).get<int>();
}

inline nlohmann::json to_json(const NetworkConfig& c) {
  auto pairs = [](const std::vector<KernelPair>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) a.push_back({p.first, p.second});
    return a;
  };
  return {{"H", c.H},
          {"W", c.W},
          {"C", c.C},
          {"branches", c.branches},
          {"num_orms", c.num_orms},
          {"orm_channels", c.orm_channels},
          {"orm_bias", c.orm_bias},
          {"width", c.width},
          {"conv_blocks", pairs(c.conv_blocks)},
          {"residual_blocks", pairs(c.residual_blocks)},
          {"merge_block", {c.merge_block.first, c.merge_block.second}},
          {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  auto pairs = [](const nlohmann::json& a) {
    std::vector<KernelPair> v;
    for (const auto& p : a) v.emplace_back(p.at(0).get<Kernel>(), p.at(1).get<Kernel>());
    return v;
  };
  c.H = j.at("H");
  c.W = j.at("W");
  c.C = j.at("C");
  c.branches = j.at("branches");
  c.num_orms = j.at("num_orms");
  c.orm_channels = j.at("orm_channels");
  c.orm_bias = j.at("orm_bias");
  c.width = j.at("width");
  c.conv_blocks = pairs(j.at("conv_blocks"));
  c.residual_blocks = pairs(j.at("residual_blocks"));
  c.merge_block = {j.at("merge_block").at(0).get<Kernel>(), j.at("merge_block").at(1).get<Kernel>()};
  c.bn_eps = j.at("bn_eps");
  c.bn_momentum = j.at("bn_momentum");
  return c;
}

template <typename T>
class Network {
 public:
  struct Conv {
    int kernel = -1;
    int bias = -1;  // -1: no bias
  };
  struct BatchNorm {
    int gamma = -1, beta = -1, state = -1;
  };
  struct ConvBlock {
    Conv first, second;
    BatchNorm bn;
  };
  struct Orm {
    Conv embed1, embed2;
  };
  struct Branch {
    std::vector<Orm> orms;
    std::vector<ConvBlock> blocks;
    std::vector<ConvBlock> residual;
  };
  struct Merge {
    ConvBlock block;
    Conv head1, head2;
  };

  explicit Network(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)), rng_(seed) {
    cfg_.validate();
    for (int b = 0; b < cfg_.branches; ++b) branches_.push_back(make_branch(b == 0 ? "h" : b == 1 ? "v" : "b" + std::to_string(b)));
    const int in = cfg_.width * cfg_.branches;
    merge_.block = make_block("merge.block", in, cfg_.merge_block);
    merge_.head1 = make_conv("merge.head1", {1, 1}, cfg_.width, cfg_.width, true);
    merge_.head2 = make_conv("merge.head2", {1, 1}, cfg_.width, 1, true);
  }

  const NetworkConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<BatchNormState<T>>& bn_states() { return bn_; }
  const std::vector<BatchNormState<T>>& bn_states() const { return bn_; }
  const std::vector<std::string>& bn_names() const { return bn_names_; }
  const std::vector<Branch>& branches() const { return branches_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // ORM: two 1x1 embeddings, centre-row relations, ReLU, then concatenation
  // with the input. (N, H, W, Cin) -> (N, H, W, Cin + W).
  Var orm_forward(Tape<T>& tape, const Orm& orm, Var x) {
    Var e1 = conv(tape, orm.embed1, x);
    Var e2 = conv(tape, orm.embed2, x);
    Var f4 = nn::relu(tape, nn::center_row_relation(tape, e1, e2));
    return nn::concat_channels(tape, x, f4);
  }

  // Conv-ReLU-Conv-BN-ReLU
  Var conv_block_forward(Tape<T>& tape, const ConvBlock& b, Var x, Mode mode) {
    Var y = nn::relu(tape, conv(tape, b.first, x));
    y = conv(tape, b.second, y);
    y = nn::batchnorm(tape, y, tape.parameter(params_[b.bn.gamma]), tape.parameter(params_[b.bn.beta]), bn_[b.bn.state],
                      mode, cfg_.bn_eps, cfg_.bn_momentum);
    return nn::relu(tape, y);
  }

  // conv_block(x) + centre slice of x
  Var residual_block_forward(Tape<T>& tape, const ConvBlock& b, Var x, Mode mode) {
    Var y = conv_block_forward(tape, b, x, mode);
    const Shape s = tape.value(y).shape();
    const int oh = s[1], ow = s[2];
    if (s[3] != tape.value(x).dim(3)) throw ShapeError("residual block must preserve the channel count");
    return nn::add(tape, y, nn::center_slice(tape, x, oh, ow));
  }

  Var branch_forward(Tape<T>& tape, int branch, Var patch, Mode mode) {
    check_input(tape.value(patch));
    const Branch& br = branches_.at(static_cast<std::size_t>(branch));
    Var x = patch;
    for (const auto& orm : br.orms) x = orm_forward(tape, orm, x);
    for (const auto& b : br.blocks) x = conv_block_forward(tape, b, x, mode);
    for (const auto& b : br.residual) x = residual_block_forward(tape, b, x, mode);
    return x;
  }

  // Channel concat, Conv-ReLU-Conv-BN-ReLU, then Conv-ReLU-Conv down to one
  // linear output. Returns (N, 1).
  Var merge_forward(Tape<T>& tape, Var feat_h, Var feat_v, Mode mode) {
    const Shape sh = tape.value(feat_h).shape();
    if (sh != tape.value(feat_v).shape()) throw ShapeError("merge inputs must have the same shape");
    Var x = nn::concat_channels(tape, feat_h, feat_v);
    x = conv_block_forward(tape, merge_.block, x, mode);
    x = nn::relu(tape, conv(tape, merge_.head1, x));
    x = conv(tape, merge_.head2, x);
    const Shape so = tape.value(x).shape();
    if (so[1] != 1 || so[2] != 1 || so[3] != 1) throw ShapeError("merge output must be 1x1x1, got " + nn::to_string(so));
    return nn::reshape(tape, x, {so[0], 1});
  }

  Var forward(Tape<T>& tape, Var patch_h, Var patch_v, Mode mode) {
    if (cfg_.branches != 2) throw ArgumentError("forward needs exactly two branches");
    Var fh = branch_forward(tape, 0, patch_h, mode);
    Var fv = branch_forward(tape, 1, patch_v, mode);
    return merge_forward(tape, fh, fv, mode);
  }

  // Eval-mode predictions for a batch of patch pairs.
  std::vector<float> predict(const Tensor<T>& patches_h, const Tensor<T>& patches_v) {
    Tape<T> tape;
    Var out = forward(tape, tape.constant(patches_h), tape.constant(patches_v), Mode::eval);
    const auto& v = tape.value(out);
    return std::vector<float>(v.values().begin(), v.values().end());
  }

  void check_input(const Tensor<T>& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != cfg_.H || s[2] != cfg_.W || s[3] != cfg_.C)
      throw ShapeError("network expects patches of " + std::to_string(cfg_.H) + "x" + std::to_string(cfg_.W) + "x" +
                       std::to_string(cfg_.C) + ", got " + nn::to_string(s));
  }

 private:
  Var conv(Tape<T>& tape, const Conv& c, Var x) {
    Var k = tape.parameter(params_[c.kernel]);
    return c.bias >= 0 ? nn::conv2d_valid(tape, x, k, tape.parameter(params_[c.bias])) : nn::conv2d_valid(tape, x, k);
  }

  int add_param(std::string name, Tensor<T> value) {
    params_.emplace_back(std::move(name), std::move(value));
    return static_cast<int>(params_.size()) - 1;
  }

  // He-normal kernel, zero bias.
  Conv make_conv(const std::string& name, Kernel k, int cin, int cout, bool bias) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (k.h * k.w * cin)));
    Tensor<T> w({k.h, k.w, cin, cout});
    for (auto& v : w.values()) v = static_cast<T>(normal(rng_));
    Conv c;
    c.kernel = add_param(name + ".kernel", std::move(w));
    if (bias) c.bias = add_param(name + ".bias", Tensor<T>({cout}));
    return c;
  }

  ConvBlock make_block(const std::string& name, int cin, const KernelPair& k) {
    ConvBlock b;
    b.first = make_conv(name + ".conv1", k.first, cin, cfg_.width, true);
    b.second = make_conv(name + ".conv2", k.second, cfg_.width, cfg_.width, true);
    b.bn.gamma = add_param(name + ".bn.gamma", Tensor<T>({cfg_.width}, T(1)));
    b.bn.beta = add_param(name + ".bn.beta", Tensor<T>({cfg_.width}));
    bn_.emplace_back(cfg_.width);
    bn_names_.push_back(name + ".bn");
    b.bn.state = static_cast<int>(bn_.size()) - 1;
    return b;
  }

  Branch make_branch(const std::string& prefix) {
    Branch br;
    int ch = cfg_.C;
    for (int i = 0; i < cfg_.num_orms; ++i) {
      const std::string n = prefix + ".orm" + std::to_string(i);
      br.orms.push_back({make_conv(n + ".embed1", {1, 1}, ch, cfg_.orm_channels, cfg_.orm_bias),
                         make_conv(n + ".embed2", {1, 1}, ch, cfg_.orm_channels, cfg_.orm_bias)});
      ch += cfg_.W;
    }
    for (std::size_t i = 0; i < cfg_.conv_blocks.size(); ++i) {
      br.blocks.push_back(make_block(prefix + ".block" + std::to_string(i), ch, cfg_.conv_blocks[i]));
      ch = cfg_.width;
    }
    for (std::size_t i = 0; i < cfg_.residual_blocks.size(); ++i)
      br.residual.push_back(make_block(prefix + ".res" + std::to_string(i), ch, cfg_.residual_blocks[i]));
    return br;
  }

  NetworkConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Parameter<T>> params_;
  std::vector<BatchNormState<T>> bn_;
  std::vector<std::string> bn_names_;
  std::vector<Branch> branches_;
  Merge merge_;
};

// Intermediate ORM features of one patch, with the full relation matrix
// computed through the generic matmul route.
template <typename T>
struct OrmTrace {
  Tensor<T> F3;  // (H*W) x (H*W)
  Tensor<T> f3;  // W x (H*W): rows of F3 for the centre angular row
  Tensor<T> F4;  // H x W x W
  Tensor<T> F5;  // H x W x (W + C)
};

template <typename T>
OrmTrace<T> trace_orm(Network<T>& net, int branch, int orm_index, const Tensor<T>& patch) {
  const auto& orm = net.branches().at(static_cast<std::size_t>(branch)).orms.at(static_cast<std::size_t>(orm_index));
  auto& ps = net.parameters();
  if (patch.rank() != 4 || patch.dim(0) != 1) throw ShapeError("trace_orm expects a single (1, H, W, C) patch");
  const int H = patch.dim(1), W = patch.dim(2);
  Tape<T> tape;
  Var x = tape.constant(patch);
  auto embed = [&](const typename Network<T>::Conv& c) {
    Var k = tape.parameter(ps[c.kernel]);
    return c.bias >= 0 ? nn::conv2d_valid(tape, x, k, tape.parameter(ps[c.bias])) : nn::conv2d_valid(tape, x, k);
  };
  Var e1 = embed(orm.embed1), e2 = embed(orm.embed2);
  const int K = tape.value(e1).dim(3);
  Var F1 = nn::reshape(tape, e1, {H * W, K});
  Var F2 = nn::reshape(tape, e2, {H * W, K});
  Var F3 = nn::matmul(tape, F1, nn::transpose(tape, F2));
  OrmTrace<T> tr;
  tr.F3 = tape.value(F3);
  const int hc = (H - 1) / 2;
  tr.f3 = Tensor<T>({W, H * W});
  for (int w = 0; w < W; ++w)
    for (int p = 0; p < H * W; ++p) tr.f3.at(w, p) = tr.F3.at(hc * W + w, p);
  tr.F4 = Tensor<T>({H, W, W});
  for (int w = 0; w < W; ++w)
    for (int p = 0; p < H * W; ++p) {
      const T v = tr.f3.at(w, p);
      tr.F4[static_cast<std::size_t>(p) * W + w] = v > T(0) ? v : T(0);
    }
  Var out = net.orm_forward(tape, orm, x);
  const auto& o = tape.value(out);
  tr.F5 = o.reshaped({H, W, o.dim(3)});
  return tr;
}

// (N, H, W, C) tensor from patches.
template <typename T>
Tensor<T> stack_patches(const std::vector<const EPIPatch*>& patches) {
  if (patches.empty()) throw ArgumentError("no patches to stack");
  const auto& p0 = *patches.front();
  Tensor<T> t({static_cast<int>(patches.size()), p0.H, p0.W, p0.C});
  const std::size_t each = p0.data.size();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i]->data.size() != each) throw ShapeError("patches differ in size");
    std::copy(patches[i]->data.begin(), patches[i]->data.end(), t.data() + i * each);
  }
  return t;
}

}  // namespace epiorm
