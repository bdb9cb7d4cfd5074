#pragma once

// Differentiable layer primitives. Activations are (N, H, W, C); kernels are
// (KH, KW, Cin, Cout); matrices are rank 2.

#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <memory>

#include <spdlog/spdlog.h>

#include "epiorm/nn/tape.hpp"

namespace epiorm::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline void require_rank(const Shape& s, int r, const char* what) {
  if (static_cast<int>(s.size()) != r)
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(r) + ", got " + to_string(s));
}

// Rows are output positions (n, oh, ow); columns are (kh, kw, ci). With
// channels last, each (kh) slice is a contiguous KW*Cin run of the input.
template <typename T>
void im2col(const Tensor<T>& x, int KH, int KW, RowMatrix<T>& cols) {
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int OH = H - KH + 1, OW = W - KW + 1;
  const int run = KW * C;
  cols.resize(static_cast<Eigen::Index>(N) * OH * OW, static_cast<Eigen::Index>(KH) * run);
  T* dst = cols.data();
  for (int n = 0; n < N; ++n)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow)
        for (int kh = 0; kh < KH; ++kh) {
          const T* src = x.data() + x.offset(n, oh + kh, ow, 0);
          std::copy(src, src + run, dst);
          dst += run;
        }
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, int KH, int KW, Tensor<T>& dx) {
  const int N = dx.dim(0), H = dx.dim(1), W = dx.dim(2), C = dx.dim(3);
  const int OH = H - KH + 1, OW = W - KW + 1;
  const int run = KW * C;
  const T* src = cols.data();
  for (int n = 0; n < N; ++n)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow)
        for (int kh = 0; kh < KH; ++kh) {
          T* dst = dx.data() + dx.offset(n, oh + kh, ow, 0);
          for (int i = 0; i < run; ++i) dst[i] += src[i];
          src += run;
        }
}

}  // namespace detail

// Valid (unpadded) stride-1 convolution. `bias` may be an invalid Var.
template <typename T>
Var conv2d_valid(Tape<T>& tape, Var x, Var kernel, Var bias = {}) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& kv = tape.value(kernel);
  detail::require_rank(xv.shape(), 4, "conv2d input");
  detail::require_rank(kv.shape(), 4, "conv2d kernel");
  const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int KH = kv.dim(0), KW = kv.dim(1), CO = kv.dim(3);
  if (kv.dim(2) != C)
    throw ShapeError("conv2d kernel expects " + std::to_string(kv.dim(2)) + " input channels, got " + std::to_string(C));
  if (KH > H || KW > W) throw ShapeError("conv2d kernel " + to_string(kv.shape()) + " larger than input " + to_string(xv.shape()));
  if (bias.valid() && tape.value(bias).shape() != Shape{CO}) throw ShapeError("conv2d bias must have shape [Cout]");
  const int OH = H - KH + 1, OW = W - KW + 1;
  const Eigen::Index rows = static_cast<Eigen::Index>(N) * OH * OW;
  const Eigen::Index depth = static_cast<Eigen::Index>(KH) * KW * C;
  const bool pointwise = KH == 1 && KW == 1;

  Tensor<T> out({N, OH, OW, CO});
  ConstMatrixMap<T> K(kv.data(), depth, CO);
  MatrixMap<T> Y(out.data(), rows, CO);
  if (pointwise) {
    Y.noalias() = ConstMatrixMap<T>(xv.data(), rows, depth) * K;
  } else {
    RowMatrix<T> cols;
    detail::im2col(xv, KH, KW, cols);
    Y.noalias() = cols * K;
  }
  if (bias.valid()) {
    const T* b = tape.value(bias).data();
    for (Eigen::Index r = 0; r < rows; ++r)
      for (int c = 0; c < CO; ++c) Y(r, c) += b[c];
  }

  return tape.record(std::move(out), {x, kernel, bias.valid() ? bias : kernel},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(x);
                       const Tensor<T>& kv = t.value(kernel);
                       ConstMatrixMap<T> dY(g.data(), rows, CO);
                       ConstMatrixMap<T> K(kv.data(), depth, CO);
                       RowMatrix<T> cols;
                       if (!pointwise && (t.requires_grad(kernel))) detail::im2col(xv, KH, KW, cols);
                       if (t.requires_grad(kernel)) {
                         MatrixMap<T> dK(t.grad_buffer(kernel).data(), depth, CO);
                         if (pointwise)
                           dK.noalias() += ConstMatrixMap<T>(xv.data(), rows, depth).transpose() * dY;
                         else
                           dK.noalias() += cols.transpose() * dY;
                       }
                       if (bias.valid() && t.requires_grad(bias)) {
                         T* db = t.grad_buffer(bias).data();
                         for (Eigen::Index r = 0; r < rows; ++r)
                           for (int c = 0; c < CO; ++c) db[c] += dY(r, c);
                       }
                       if (t.requires_grad(x)) {
                         Tensor<T>& dx = t.grad_buffer(x);
                         if (pointwise) {
                           MatrixMap<T>(dx.data(), rows, depth).noalias() += dY * K.transpose();
                         } else {
                           RowMatrix<T> dcols = dY * K.transpose();
                           detail::col2im_add(dcols, KH, KW, dx);
                         }
                       }
                     });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  // NaN passes through so a corrupt input surfaces as a non-finite loss
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] <= T(0) ? T(0) : xv[i];
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > T(0)) dx[i] += g[i];
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) throw ShapeError("add: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor<T> out = av;
  out += bv;
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) t.grad_buffer(a) += g;
    if (t.requires_grad(b)) t.grad_buffer(b) += g;
  });
}

// Centred spatial window of size out_h x out_w, all channels.
template <typename T>
Var center_slice(Tape<T>& tape, Var x, int out_h, int out_w) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank(xv.shape(), 4, "center_slice");
  const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int dh = H - out_h, dw = W - out_w;
  if (out_h < 1 || out_w < 1 || dh < 0 || dw < 0 || dh % 2 != 0 || dw % 2 != 0)
    throw ShapeError("center_slice " + std::to_string(out_h) + "x" + std::to_string(out_w) + " of " +
                     to_string(xv.shape()) + " needs even, non-negative margins");
  const int oh0 = dh / 2, ow0 = dw / 2;
  Tensor<T> out({N, out_h, out_w, C});
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < out_h; ++h) {
      const T* src = xv.data() + xv.offset(n, h + oh0, ow0, 0);
      std::copy(src, src + static_cast<std::size_t>(out_w) * C, out.data() + out.offset(n, h, 0, 0));
    }
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < out_h; ++h) {
        const T* src = g.data() + g.offset(n, h, 0, 0);
        T* dst = dx.data() + dx.offset(n, h + oh0, ow0, 0);
        for (int i = 0; i < out_w * C; ++i) dst[i] += src[i];
      }
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require_rank(av.shape(), 4, "concat_channels");
  detail::require_rank(bv.shape(), 4, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw ShapeError("concat_channels: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  const int CA = av.dim(3), CB = bv.dim(3);
  const std::size_t positions = av.size() / CA;
  Tensor<T> out({av.dim(0), av.dim(1), av.dim(2), CA + CB});
  for (std::size_t p = 0; p < positions; ++p) {
    std::copy(av.data() + p * CA, av.data() + (p + 1) * CA, out.data() + p * (CA + CB));
    std::copy(bv.data() + p * CB, bv.data() + (p + 1) * CB, out.data() + p * (CA + CB) + CA);
  }
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      T* da = t.grad_buffer(a).data();
      for (std::size_t p = 0; p < positions; ++p)
        for (int c = 0; c < CA; ++c) da[p * CA + c] += g[p * (CA + CB) + c];
    }
    if (t.requires_grad(b)) {
      T* db = t.grad_buffer(b).data();
      for (std::size_t p = 0; p < positions; ++p)
        for (int c = 0; c < CB; ++c) db[p * CB + c] += g[p * (CA + CB) + CA + c];
    }
  });
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require_rank(av.shape(), 2, "matmul");
  detail::require_rank(bv.shape(), 2, "matmul");
  const int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
  if (bv.dim(0) != K) throw ShapeError("matmul: " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  Tensor<T> out({M, N});
  MatrixMap<T>(out.data(), M, N).noalias() = ConstMatrixMap<T>(av.data(), M, K) * ConstMatrixMap<T>(bv.data(), K, N);
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    ConstMatrixMap<T> G(g.data(), M, N);
    if (t.requires_grad(a))
      MatrixMap<T>(t.grad_buffer(a).data(), M, K).noalias() += G * ConstMatrixMap<T>(t.value(b).data(), K, N).transpose();
    if (t.requires_grad(b))
      MatrixMap<T>(t.grad_buffer(b).data(), K, N).noalias() += ConstMatrixMap<T>(t.value(a).data(), M, K).transpose() * G;
  });
}

template <typename T>
Var transpose(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  detail::require_rank(av.shape(), 2, "transpose");
  const int M = av.dim(0), N = av.dim(1);
  Tensor<T> out({N, M});
  MatrixMap<T>(out.data(), N, M) = ConstMatrixMap<T>(av.data(), M, N).transpose();
  return tape.record(std::move(out), {a}, [=](Tape<T>& t, const Tensor<T>& g) {
    MatrixMap<T>(t.grad_buffer(a).data(), M, N) += ConstMatrixMap<T>(g.data(), N, M).transpose();
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

// out[n, h, w', w] = <e1[n, hc, w, :], e2[n, h, w', :]> with hc = (H - 1) / 2:
// the relations between every patch position and the W positions of the
// centre angular row, laid out with the centre-row index as channel.
template <typename T>
Var center_row_relation(Tape<T>& tape, Var e1, Var e2) {
  const Tensor<T>& a = tape.value(e1);
  const Tensor<T>& b = tape.value(e2);
  detail::require_rank(a.shape(), 4, "center_row_relation");
  if (a.shape() != b.shape()) throw ShapeError("center_row_relation: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const int N = a.dim(0), H = a.dim(1), W = a.dim(2), K = a.dim(3);
  const int hc = (H - 1) / 2;
  const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
  Tensor<T> out({N, H, W, W});
  for (int n = 0; n < N; ++n) {
    ConstMatrixMap<T> R(a.data() + a.offset(n, hc, 0, 0), W, K);
    ConstMatrixMap<T> E(b.data() + b.offset(n, 0, 0, 0), HW, K);
    MatrixMap<T>(out.data() + out.offset(n, 0, 0, 0), HW, W).noalias() = E * R.transpose();
  }
  return tape.record(std::move(out), {e1, e2}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& a = t.value(e1);
    const Tensor<T>& b = t.value(e2);
    for (int n = 0; n < N; ++n) {
      ConstMatrixMap<T> G(g.data() + g.offset(n, 0, 0, 0), HW, W);
      if (t.requires_grad(e1)) {
        Tensor<T>& da = t.grad_buffer(e1);
        MatrixMap<T>(da.data() + da.offset(n, hc, 0, 0), W, K).noalias() +=
            G.transpose() * ConstMatrixMap<T>(b.data() + b.offset(n, 0, 0, 0), HW, K);
      }
      if (t.requires_grad(e2)) {
        Tensor<T>& db = t.grad_buffer(e2);
        MatrixMap<T>(db.data() + db.offset(n, 0, 0, 0), HW, K).noalias() +=
            G * ConstMatrixMap<T>(a.data() + a.offset(n, hc, 0, 0), W, K);
      }
    }
  });
}

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  long updates = 0;
  bool warned = false;

  BatchNormState() = default;
  explicit BatchNormState(int channels) : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

enum class Mode { train, eval };

// Per-channel normalisation over (N, H, W) in train mode, running statistics
// in eval mode. The running variance uses the unbiased batch estimate.
template <typename T>
Var batchnorm(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormState<T>& state, Mode mode,
              double eps = 1e-5, double momentum = 0.9) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank(xv.shape(), 4, "batchnorm");
  const int C = xv.dim(3);
  if (tape.value(gamma).shape() != Shape{C} || tape.value(beta).shape() != Shape{C})
    throw ShapeError("batchnorm parameters must have shape [C]");
  const std::size_t m = xv.size() / C;
  const T* gv = tape.value(gamma).data();
  const T* bv = tape.value(beta).data();
  Tensor<T> out(xv.shape());

  if (mode == Mode::eval) {
    if (state.updates == 0 && !state.warned) {
      // one warning per process; later layers and networks log at debug level
      static std::atomic<bool> announced{false};
      if (!announced.exchange(true))
        spdlog::warn("batchnorm evaluated before any training step; using initial running statistics");
      else
        spdlog::debug("batchnorm evaluated before any training step");
      state.warned = true;
    }
    std::vector<T> scale(C), shift(C);
    for (int c = 0; c < C; ++c) {
      scale[c] = gv[c] / std::sqrt(state.running_var[c] + T(eps));
      shift[c] = bv[c] - state.running_mean[c] * scale[c];
    }
    for (std::size_t p = 0; p < m; ++p)
      for (int c = 0; c < C; ++c) out[p * C + c] = xv[p * C + c] * scale[c] + shift[c];
    Tensor<T> xhat_scale({C}, std::vector<T>(scale));
    return tape.record(std::move(out), {x, gamma, beta}, [=, rm = state.running_mean, rv = state.running_var](
                                                             Tape<T>& t, const Tensor<T>& g) {
      const Tensor<T>& xv = t.value(x);
      if (t.requires_grad(x)) {
        Tensor<T>& dx = t.grad_buffer(x);
        for (std::size_t p = 0; p < m; ++p)
          for (int c = 0; c < C; ++c) dx[p * C + c] += g[p * C + c] * xhat_scale[c];
      }
      const bool dgam = t.requires_grad(gamma), dbet = t.requires_grad(beta);
      if (dgam || dbet) {
        std::vector<T> sg(C, T(0)), sb(C, T(0));
        for (std::size_t p = 0; p < m; ++p)
          for (int c = 0; c < C; ++c) {
            const T xhat = (xv[p * C + c] - rm[c]) / std::sqrt(rv[c] + T(eps));
            sg[c] += g[p * C + c] * xhat;
            sb[c] += g[p * C + c];
          }
        if (dgam)
          for (int c = 0; c < C; ++c) t.grad_buffer(gamma)[c] += sg[c];
        if (dbet)
          for (int c = 0; c < C; ++c) t.grad_buffer(beta)[c] += sb[c];
      }
    });
  }

  if (m < 2) throw ShapeError("batchnorm in train mode needs at least two values per channel");
  std::vector<T> mean(C, T(0)), var(C, T(0));
  for (std::size_t p = 0; p < m; ++p)
    for (int c = 0; c < C; ++c) mean[c] += xv[p * C + c];
  for (int c = 0; c < C; ++c) mean[c] /= T(m);
  for (std::size_t p = 0; p < m; ++p)
    for (int c = 0; c < C; ++c) {
      const T d = xv[p * C + c] - mean[c];
      var[c] += d * d;
    }
  for (int c = 0; c < C; ++c) var[c] /= T(m);

  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  for (int c = 0; c < C; ++c) (*inv_std)[c] = T(1) / std::sqrt(var[c] + T(eps));
  for (std::size_t p = 0; p < m; ++p)
    for (int c = 0; c < C; ++c) {
      const T h = (xv[p * C + c] - mean[c]) * (*inv_std)[c];
      (*xhat)[p * C + c] = h;
      out[p * C + c] = gv[c] * h + bv[c];
    }

  const T mom = T(momentum);
  for (int c = 0; c < C; ++c) {
    state.running_mean[c] = mom * state.running_mean[c] + (T(1) - mom) * mean[c];
    state.running_var[c] = mom * state.running_var[c] + (T(1) - mom) * var[c] * T(m) / T(m - 1);
  }
  ++state.updates;

  return tape.record(std::move(out), {x, gamma, beta}, [=](Tape<T>& t, const Tensor<T>& g) {
    std::vector<T> sg(C, T(0)), sb(C, T(0));
    for (std::size_t p = 0; p < m; ++p)
      for (int c = 0; c < C; ++c) {
        sg[c] += g[p * C + c] * (*xhat)[p * C + c];
        sb[c] += g[p * C + c];
      }
    if (t.requires_grad(gamma))
      for (int c = 0; c < C; ++c) t.grad_buffer(gamma)[c] += sg[c];
    if (t.requires_grad(beta))
      for (int c = 0; c < C; ++c) t.grad_buffer(beta)[c] += sb[c];
    if (t.requires_grad(x)) {
      const T* gam = t.value(gamma).data();
      Tensor<T>& dx = t.grad_buffer(x);
      const T inv_m = T(1) / T(m);
      for (std::size_t p = 0; p < m; ++p)
        for (int c = 0; c < C; ++c)
          dx[p * C + c] += gam[c] * (*inv_std)[c] * inv_m *
                           (T(m) * g[p * C + c] - sb[c] - (*xhat)[p * C + c] * sg[c]);
    }
  });
}

// mean |pred - target|; the subgradient at exact ties is 0.
template <typename T>
Var mae_loss(Tape<T>& tape, Var pred, Var target) {
  const Tensor<T>& p = tape.value(pred);
  const Tensor<T>& q = tape.value(target);
  if (p.shape() != q.shape()) throw ShapeError("mae_loss: " + to_string(p.shape()) + " vs " + to_string(q.shape()));
  T sum = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  const T n = T(p.size());
  return tape.record(Tensor<T>({1}, sum / n), {pred, target}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& p = t.value(pred);
    const Tensor<T>& q = t.value(target);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T d = p[i] - q[i];
      const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (t.requires_grad(pred)) t.grad_buffer(pred)[i] += g[0] * s / n;
      if (t.requires_grad(target)) t.grad_buffer(target)[i] -= g[0] * s / n;
    }
  });
}

// sum(x * weights) for a fixed weight tensor; reduces any output to a scalar
// for gradient checking.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.shape() != weights.shape()) throw ShapeError("weighted_sum shape mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return tape.record(Tensor<T>({1}, s), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * weights[i];
  });
}

}  // namespace epiorm::nn
