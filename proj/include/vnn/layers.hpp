#pragma once

#include <cmath>

#include "vnn/ops.hpp"
#include "vnn/rng.hpp"
#include "vnn/tensor.hpp"

namespace vnn {

struct DenseParams {
  Tensor W;  // [O x I]
  Tensor b;  // [O]
};

struct ConvParams {
  Tensor K;  // [F x C x kh x kw]
  Tensor b;  // [F]
  int stride = 1;
  int padding = 0;
};

inline Tensor affine(const Tensor& x, const DenseParams& p) { return ops::affine(x, p.W, p.b); }

// Variational layer: two parallel sub-layers emit the mean and the standard
// deviation of a diagonal Gaussian over the layer output; the output is a
// reparametrized sample  act_out(m + s (*) eps).
struct VariationalDenseParams {
  DenseParams mu;
  DenseParams sigma;
  Activation act_mu = Activation::Identity;
  Activation act_sigma = Activation::Identity;
  Activation act_out = Activation::Identity;
};

struct VariationalConvParams {
  ConvParams mu;
  ConvParams sigma;
  Activation act_mu = Activation::Identity;
  Activation act_sigma = Activation::Identity;
  Activation act_out = Activation::Identity;
};

struct VariationalCache {
  Tensor x;
  Tensor a_mu, m;     // pre/post mean activation
  Tensor a_sigma, s;  // pre/post sigma activation
  Tensor pre;         // m + s (*) eps
  Tensor eps;
};

namespace detail {

template <typename FwdMu, typename FwdSigma>
Tensor variational_forward_impl(const Tensor& x, Activation act_mu, Activation act_sigma,
                                Activation act_out, const Tensor& eps, VariationalCache* cache,
                                FwdMu&& fwd_mu, FwdSigma&& fwd_sigma) {
  Tensor a_mu = fwd_mu(x);
  Tensor m = ops::activation(a_mu, act_mu);
  Tensor a_sigma = fwd_sigma(x);
  Tensor s = ops::activation(a_sigma, act_sigma);
  require_same_shape(m, eps, "variational forward: eps");
  Tensor pre = m;
  for (std::size_t i = 0; i < pre.size(); ++i) pre.data[i] += s.data[i] * eps.data[i];
  Tensor y = ops::activation(pre, act_out);
  if (cache) {
    cache->x = x;
    cache->a_mu = std::move(a_mu);
    cache->m = std::move(m);
    cache->a_sigma = std::move(a_sigma);
    cache->s = std::move(s);
    cache->pre = std::move(pre);
    cache->eps = eps;
  }
  return y;
}

}  // namespace detail

// eps carries the epistemic-index material for this site and must already
// have the full output shape (callers broadcast a shared draw if needed).
inline Tensor variational_dense_forward(const Tensor& x, const VariationalDenseParams& p,
                                        const Tensor& eps, VariationalCache* cache = nullptr) {
  return detail::variational_forward_impl(
      x, p.act_mu, p.act_sigma, p.act_out, eps, cache,
      [&](const Tensor& in) { return ops::affine(in, p.mu.W, p.mu.b); },
      [&](const Tensor& in) { return ops::affine(in, p.sigma.W, p.sigma.b); });
}

inline Tensor variational_conv_forward(const Tensor& x, const VariationalConvParams& p,
                                       const Tensor& eps, VariationalCache* cache = nullptr) {
  return detail::variational_forward_impl(
      x, p.act_mu, p.act_sigma, p.act_out, eps, cache,
      [&](const Tensor& in) { return ops::conv2d(in, p.mu.K, p.mu.b, p.mu.stride, p.mu.padding); },
      [&](const Tensor& in) {
        return ops::conv2d(in, p.sigma.K, p.sigma.b, p.sigma.stride, p.sigma.padding);
      });
}

// Gradients flow through both the mean and the sigma branch. Returns dx when
// want_dx; eps is treated as a constant.
inline Tensor variational_dense_backward(const Tensor& dy, VariationalDenseParams& p,
                                         VariationalCache& c, bool want_dx) {
  Tensor dpre = ops::activation_backward(c.pre, dy, p.act_out);
  Tensor da_mu = ops::activation_backward(c.a_mu, dpre, p.act_mu);
  Tensor ds = dpre;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.data[i] *= c.eps.data[i];
  Tensor da_sigma = ops::activation_backward(c.a_sigma, ds, p.act_sigma);
  if (want_dx) c.x.ensure_grad();
  ops::affine_backward(c.x, p.mu.W, p.mu.b, da_mu);
  ops::affine_backward(c.x, p.sigma.W, p.sigma.b, da_sigma);
  Tensor dx;
  if (want_dx) {
    dx = Tensor(c.x.shape, c.x.grad);
    c.x.grad.clear();
  }
  return dx;
}

inline Tensor variational_conv_backward(const Tensor& dy, VariationalConvParams& p,
                                        VariationalCache& c, bool want_dx) {
  Tensor dpre = ops::activation_backward(c.pre, dy, p.act_out);
  Tensor da_mu = ops::activation_backward(c.a_mu, dpre, p.act_mu);
  Tensor ds = dpre;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.data[i] *= c.eps.data[i];
  Tensor da_sigma = ops::activation_backward(c.a_sigma, ds, p.act_sigma);
  if (want_dx) c.x.ensure_grad();
  ops::conv2d_backward(c.x, p.mu.K, p.mu.b, p.mu.stride, p.mu.padding, da_mu);
  ops::conv2d_backward(c.x, p.sigma.K, p.sigma.b, p.sigma.stride, p.sigma.padding, da_sigma);
  Tensor dx;
  if (want_dx) {
    dx = Tensor(c.x.shape, c.x.grad);
    c.x.grad.clear();
  }
  return dx;
}

// Bayes-by-backprop layer: weights are sampled as mean + softplus(rho) (*) z
// with z standard normal; one weight draw is shared across the whole batch.
struct BbbDenseParams {
  DenseParams mean;
  DenseParams rho;  // unconstrained pre-scale, std = softplus(rho)
  double prior_std = 1.0;
};

struct BbbConvParams {
  ConvParams mean;
  ConvParams rho;
  double prior_std = 1.0;
};

struct BbbCache {
  Tensor x;
  Tensor W, b;      // materialized draw
  Tensor zW, zb;
};

inline double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// softplus(rho) = s  =>  rho = log(exp(s) - 1)
inline double softplus_inverse(double s) {
  if (s <= 0.0) throw UsageError("softplus_inverse: argument must be > 0");
  return s > 30.0 ? s : std::log(std::expm1(s));
}

namespace detail {

inline Tensor bbb_materialize(const Tensor& mean, const Tensor& rho, const Tensor& z,
                              const char* what) {
  require_same_shape(mean, rho, what);
  require_same_shape(mean, z, what);
  Tensor out = mean;
  out.grad.clear();
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] += softplus(rho.data[i]) * z.data[i];
  return out;
}

// d(mean) += dW ; d(rho) += dW * z * sigmoid(rho)
inline void bbb_scatter_grad(Tensor& mean, Tensor& rho, const Tensor& z, const Tensor& dW) {
  if (mean.has_grad())
    for (std::size_t i = 0; i < dW.size(); ++i) mean.grad[i] += dW.data[i];
  if (rho.has_grad())
    for (std::size_t i = 0; i < dW.size(); ++i)
      rho.grad[i] += dW.data[i] * z.data[i] * sigmoid(rho.data[i]);
}

}  // namespace detail

inline Tensor bbb_dense_forward(const Tensor& x, const BbbDenseParams& p, const Tensor& z_W,
                                const Tensor& z_b, BbbCache* cache = nullptr) {
  Tensor W = detail::bbb_materialize(p.mean.W, p.rho.W, z_W, "bbb_dense_forward: W");
  Tensor b = detail::bbb_materialize(p.mean.b, p.rho.b, z_b, "bbb_dense_forward: b");
  Tensor y = ops::affine(x, W, b);
  if (cache) {
    cache->x = x;
    cache->W = std::move(W);
    cache->b = std::move(b);
    cache->zW = z_W;
    cache->zb = z_b;
  }
  return y;
}

inline Tensor bbb_dense_backward(const Tensor& dy, BbbDenseParams& p, BbbCache& c, bool want_dx) {
  c.W.ensure_grad();
  c.b.ensure_grad();
  if (want_dx) c.x.ensure_grad();
  ops::affine_backward(c.x, c.W, c.b, dy);
  detail::bbb_scatter_grad(p.mean.W, p.rho.W, c.zW, Tensor(c.W.shape, c.W.grad));
  detail::bbb_scatter_grad(p.mean.b, p.rho.b, c.zb, Tensor(c.b.shape, c.b.grad));
  Tensor dx;
  if (want_dx) {
    dx = Tensor(c.x.shape, c.x.grad);
    c.x.grad.clear();
  }
  return dx;
}

inline Tensor bbb_conv_forward(const Tensor& x, const BbbConvParams& p, const Tensor& z_K,
                               const Tensor& z_b, BbbCache* cache = nullptr) {
  Tensor K = detail::bbb_materialize(p.mean.K, p.rho.K, z_K, "bbb_conv_forward: K");
  Tensor b = detail::bbb_materialize(p.mean.b, p.rho.b, z_b, "bbb_conv_forward: b");
  Tensor y = ops::conv2d(x, K, b, p.mean.stride, p.mean.padding);
  if (cache) {
    cache->x = x;
    cache->W = std::move(K);
    cache->b = std::move(b);
    cache->zW = z_K;
    cache->zb = z_b;
  }
  return y;
}

inline Tensor bbb_conv_backward(const Tensor& dy, BbbConvParams& p, BbbCache& c, bool want_dx) {
  c.W.ensure_grad();
  c.b.ensure_grad();
  if (want_dx) c.x.ensure_grad();
  ops::conv2d_backward(c.x, c.W, c.b, p.mean.stride, p.mean.padding, dy);
  detail::bbb_scatter_grad(p.mean.K, p.rho.K, c.zW, Tensor(c.W.shape, c.W.grad));
  detail::bbb_scatter_grad(p.mean.b, p.rho.b, c.zb, Tensor(c.b.shape, c.b.grad));
  Tensor dx;
  if (want_dx) {
    dx = Tensor(c.x.shape, c.x.grad);
    c.x.grad.clear();
  }
  return dx;
}

namespace detail {

// KL(N(mu, sigma^2) || N(0, prior^2)) summed elementwise over one tensor pair.
inline double bbb_kl_tensor(const Tensor& mean, const Tensor& rho, double prior_std) {
  double kl = 0.0;
  const double p2 = prior_std * prior_std;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double s = softplus(rho.data[i]);
    kl += std::log(prior_std / s) + (s * s + mean.data[i] * mean.data[i]) / (2.0 * p2) - 0.5;
  }
  return kl;
}

// Gradient of the same closed form, accumulated into mean.grad / rho.grad.
inline void bbb_kl_tensor_backward(Tensor& mean, Tensor& rho, double prior_std, double scale) {
  const double p2 = prior_std * prior_std;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double s = softplus(rho.data[i]);
    if (mean.has_grad()) mean.grad[i] += scale * mean.data[i] / p2;
    if (rho.has_grad()) rho.grad[i] += scale * (s / p2 - 1.0 / s) * sigmoid(rho.data[i]);
  }
}

}  // namespace detail

inline double bbb_kl_to_prior(const BbbDenseParams& p) {
  return detail::bbb_kl_tensor(p.mean.W, p.rho.W, p.prior_std) +
         detail::bbb_kl_tensor(p.mean.b, p.rho.b, p.prior_std);
}

inline double bbb_kl_to_prior(const BbbConvParams& p) {
  return detail::bbb_kl_tensor(p.mean.K, p.rho.K, p.prior_std) +
         detail::bbb_kl_tensor(p.mean.b, p.rho.b, p.prior_std);
}

struct DropoutConfig {
  double rate = 0.1;  // drop probability p in [0, 1)
};

inline void validate_dropout(const DropoutConfig& cfg) {
  if (!(cfg.rate >= 0.0 && cfg.rate < 1.0))
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(cfg.rate));
}

// Inverted-scaling dropout: out = x (*) mask / (1 - p), mask ~ Bernoulli(1-p)
// per element. Applied identically at train and predict time.
inline Tensor dropout_forward(const Tensor& x, const DropoutConfig& cfg, RngStream& rng,
                              Tensor* mask_out = nullptr) {
  validate_dropout(cfg);
  const double keep = 1.0 - cfg.rate;
  Tensor mask(x.shape);
  for (double& v : mask.data) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor y = x;
  y.grad.clear();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= mask.data[i];
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

inline Tensor dropout_backward(const Tensor& dy, const Tensor& mask) {
  require_same_shape(dy, mask, "dropout_backward");
  Tensor dx = dy;
  dx.grad.clear();
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask.data[i];
  return dx;
}

}  // namespace vnn
