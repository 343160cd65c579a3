#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "vnn/tensor.hpp"

namespace vnn {

enum class Activation { Identity, Relu, Softplus, Tanh };

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "softplus") return Activation::Softplus;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

namespace ops {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// y[n,o] = sum_i W[o,i] x[n,i] + b[o]
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 2 || W.rank() != 2 || b.rank() != 1)
    throw DimensionError("affine: expected x[BxI], W[OxI], b[O]");
  const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(0);
  if (W.dim(1) != I)
    throw DimensionError("affine: inner dimensions disagree, x " + shape_str(x.shape) + " vs W " +
                         shape_str(W.shape));
  if (b.dim(0) != O) throw DimensionError("affine: bias length != output width");

  Tensor y({B, O});
  ConstMatMap xm(x.data.data(), B, I);
  ConstMatMap wm(W.data.data(), O, I);
  MatMap ym(y.data.data(), B, O);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o) y.data[n * O + o] += b.data[o];
  check_finite(y, "affine");
  return y;
}

// Accumulates exact gradients into x.grad / W.grad / b.grad where allocated.
inline void affine_backward(Tensor& x, Tensor& W, Tensor& b, const Tensor& dy) {
  const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(0);
  if (dy.rank() != 2 || dy.dim(0) != B || dy.dim(1) != O)
    throw DimensionError("affine_backward: dy shape mismatch");
  ConstMatMap xm(x.data.data(), B, I);
  ConstMatMap wm(W.data.data(), O, I);
  ConstMatMap dym(dy.data.data(), B, O);
  if (W.has_grad()) {
    MatMap dwm(W.grad.data(), O, I);
    dwm.noalias() += dym.transpose() * xm;
  }
  if (b.has_grad()) {
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < O; ++o) b.grad[o] += dy.data[n * O + o];
  }
  if (x.has_grad()) {
    MatMap dxm(x.grad.data(), B, I);
    dxm.noalias() += dym * wm;
  }
}

struct ConvDims {
  std::size_t B, C, H, W, F, kh, kw, Ho, Wo;
  int stride, padding;
};

inline ConvDims conv2d_dims(const Tensor& x, const Tensor& K, const Tensor& b, int stride,
                            int padding) {
  if (x.rank() != 4 || K.rank() != 4 || b.rank() != 1)
    throw DimensionError("conv2d: expected x[BxCxHxW], K[FxCxkhxkw], b[F]");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  ConvDims d;
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.F = K.dim(0);
  d.kh = K.dim(2);
  d.kw = K.dim(3);
  d.stride = stride;
  d.padding = padding;
  if (K.dim(1) != d.C) throw DimensionError("conv2d: kernel channel count != input channels");
  if (b.dim(0) != d.F) throw DimensionError("conv2d: bias length != filter count");
  const long hn = static_cast<long>(d.H) + 2 * padding - static_cast<long>(d.kh);
  const long wn = static_cast<long>(d.W) + 2 * padding - static_cast<long>(d.kw);
  if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0)
    throw DimensionError("conv2d: output size (" + std::to_string(hn) + "/" +
                         std::to_string(stride) + "+1, " + std::to_string(wn) + "/" +
                         std::to_string(stride) + "+1) is not a positive integer");
  d.Ho = static_cast<std::size_t>(hn / stride) + 1;
  d.Wo = static_cast<std::size_t>(wn / stride) + 1;
  return d;
}

namespace detail {

// Gathers conv patches of one sample into col[(C*kh*kw) x (Ho*Wo)].
inline void im2col(const double* x, const ConvDims& d, double* col) {
  const std::size_t cols = d.Ho * d.Wo;
  for (std::size_t c = 0; c < d.C; ++c) {
    const double* xc = x + c * d.H * d.W;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        double* out = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (std::size_t oi = 0; oi < d.Ho; ++oi) {
          const long ii = static_cast<long>(oi) * d.stride + static_cast<long>(ki) - d.padding;
          for (std::size_t oj = 0; oj < d.Wo; ++oj) {
            const long jj = static_cast<long>(oj) * d.stride + static_cast<long>(kj) - d.padding;
            const bool in = ii >= 0 && ii < static_cast<long>(d.H) && jj >= 0 &&
                            jj < static_cast<long>(d.W);
            out[oi * d.Wo + oj] = in ? xc[ii * d.W + jj] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds a col buffer back onto one sample's gradient.
inline void col2im_add(const double* col, const ConvDims& d, double* dx) {
  const std::size_t cols = d.Ho * d.Wo;
  for (std::size_t c = 0; c < d.C; ++c) {
    double* xc = dx + c * d.H * d.W;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const double* in = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (std::size_t oi = 0; oi < d.Ho; ++oi) {
          const long ii = static_cast<long>(oi) * d.stride + static_cast<long>(ki) - d.padding;
          if (ii < 0 || ii >= static_cast<long>(d.H)) continue;
          for (std::size_t oj = 0; oj < d.Wo; ++oj) {
            const long jj = static_cast<long>(oj) * d.stride + static_cast<long>(kj) - d.padding;
            if (jj < 0 || jj >= static_cast<long>(d.W)) continue;
            xc[ii * d.W + jj] += in[oi * d.Wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation with bias (the usual deep-learning "convolution").
inline Tensor conv2d(const Tensor& x, const Tensor& K, const Tensor& b, int stride, int padding) {
  const ConvDims d = conv2d_dims(x, K, b, stride, padding);
  const std::size_t patch = d.C * d.kh * d.kw, cols = d.Ho * d.Wo;
  Tensor y({d.B, d.F, d.Ho, d.Wo});
  std::vector<double> col(patch * cols);
  ConstMatMap km(K.data.data(), d.F, patch);
  for (std::size_t n = 0; n < d.B; ++n) {
    detail::im2col(x.data.data() + n * d.C * d.H * d.W, d, col.data());
    ConstMatMap cm(col.data(), patch, cols);
    MatMap ym(y.data.data() + n * d.F * cols, d.F, cols);
    ym.noalias() = km * cm;
    for (std::size_t f = 0; f < d.F; ++f) ym.row(f).array() += b.data[f];
  }
  check_finite(y, "conv2d");
  return y;
}

inline void conv2d_backward(Tensor& x, Tensor& K, Tensor& b, int stride, int padding,
                            const Tensor& dy) {
  const ConvDims d = conv2d_dims(x, K, b, stride, padding);
  const std::size_t patch = d.C * d.kh * d.kw, cols = d.Ho * d.Wo;
  if (dy.shape != Shape{d.B, d.F, d.Ho, d.Wo})
    throw DimensionError("conv2d_backward: dy shape mismatch");
  std::vector<double> col(patch * cols);
  ConstMatMap km(K.data.data(), d.F, patch);
  for (std::size_t n = 0; n < d.B; ++n) {
    ConstMatMap dym(dy.data.data() + n * d.F * cols, d.F, cols);
    if (K.has_grad() ) {
      detail::im2col(x.data.data() + n * d.C * d.H * d.W, d, col.data());
      ConstMatMap cm(col.data(), patch, cols);
      MatMap dkm(K.grad.data(), d.F, patch);
      dkm.noalias() += dym * cm.transpose();
    }
    if (b.has_grad()) {
      for (std::size_t f = 0; f < d.F; ++f) b.grad[f] += dym.row(f).sum();
    }
    if (x.has_grad()) {
      MatMap cm(col.data(), patch, cols);
      cm.noalias() = km.transpose() * dym;
      detail::col2im_add(col.data(), d, x.grad.data() + n * d.C * d.H * d.W);
    }
  }
}

inline double activation_scalar(double v, Activation kind) {
  switch (kind) {
    case Activation::Identity: return v;
    case Activation::Relu: return v > 0.0 ? v : 0.0;
    case Activation::Softplus:
      // log1p(exp(v)) with the large-v branch to avoid overflow
      return v > 30.0 ? v : std::log1p(std::exp(v));
    case Activation::Tanh: return std::tanh(v);
  }
  return v;
}

// Derivative as a function of the pre-activation. Relu subgradient at 0 is 0.
inline double activation_deriv(double v, Activation kind) {
  switch (kind) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return v > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return 1.0 / (1.0 + std::exp(-v));
    case Activation::Tanh: {
      const double t = std::tanh(v);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline Tensor activation(const Tensor& x, Activation kind) {
  Tensor y = x;
  y.grad.clear();
  if (kind != Activation::Identity)
    for (double& v : y.data) v = activation_scalar(v, kind);
  check_finite(y, "activation");
  return y;
}

// Returns dx given pre-activation x and upstream dy.
inline Tensor activation_backward(const Tensor& x, const Tensor& dy, Activation kind) {
  require_same_shape(x, dy, "activation_backward");
  Tensor dx = dy;
  dx.grad.clear();
  if (kind != Activation::Identity)
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= activation_deriv(x.data[i], kind);
  return dx;
}

// Row-wise softmax of logits[BxC], numerically stabilized.
inline Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax: expected 2-D logits");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  Tensor p({B, C});
  for (std::size_t n = 0; n < B; ++n) {
    const double* row = logits.data.data() + n * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < C; ++c) p.data[n * C + c] = std::exp(row[c] - mx) / z;
  }
  return p;
}

}  // namespace ops
}  // namespace vnn
