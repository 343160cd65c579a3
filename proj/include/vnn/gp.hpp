#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>

#include "vnn/rng.hpp"
#include "vnn/tensor.hpp"

namespace vnn {

// Infinite-width ReLU network prior: depth counts hidden layers, variances
// follow the usual w ~ N(0, weight_variance / fan_in), b ~ N(0, bias_variance)
// scaling.
struct NNGPConfig {
  int depth = 2;
  double weight_variance = 2.0;
  double bias_variance = 0.1;
  int input_dim = 0;
};

struct GPPosterior {
  Tensor mean;        // [n_test]
  Tensor covariance;  // [n_test x n_test]
  double noise_variance = 0.0;
};

namespace gp_detail {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat to_eigen(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("gp: expected a 2-D tensor");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(t.data.data(), t.dim(0), t.dim(1));
}

// ReLU moment: E[relu(u) relu(v)] for (u,v) centered Gaussian with
// covariance [[k11, k12], [k12, k22]].
inline double relu_moment(double k11, double k12, double k22) {
  const double norm = std::sqrt(std::max(k11 * k22, 0.0));
  if (norm <= 0.0) return 0.0;
  double c = k12 / norm;
  c = std::min(1.0, std::max(-1.0, c));
  const double theta = std::acos(c);
  constexpr double pi = 3.14159265358979323846;
  return (norm / (2.0 * pi)) * (std::sin(theta) + (pi - theta) * std::cos(theta));
}

}  // namespace gp_detail

// Arc-cosine kernel recursion for the ReLU NNGP.
//   K0(x,x') = sb2 + sw2 * <x,x'> / D
//   K{l+1}(x,x') = sb2 + sw2 * E[relu(u) relu(v)],  (u,v) ~ N(0, K^l pair)
inline Tensor nngp_kernel(const Tensor& X1, const Tensor& X2, const NNGPConfig& cfg) {
  if (X1.rank() != 2 || X2.rank() != 2 || X1.dim(1) != X2.dim(1))
    throw DimensionError("nngp_kernel: input column counts disagree");
  const std::size_t n1 = X1.dim(0), n2 = X2.dim(0), D = X1.dim(1);
  const double sw2 = cfg.weight_variance, sb2 = cfg.bias_variance;
  const double inv_d = 1.0 / static_cast<double>(D);

  auto dot = [&](const Tensor& A, std::size_t i, const Tensor& B, std::size_t j) {
    const double* a = A.data.data() + i * D;
    const double* b = B.data.data() + j * D;
    double acc = 0.0;
    for (std::size_t k = 0; k < D; ++k) acc += a[k] * b[k];
    return acc;
  };

  // Diagonals of the self-kernels evolve alongside the cross kernel.
  std::vector<double> d1(n1), d2(n2);
  for (std::size_t i = 0; i < n1; ++i) d1[i] = sb2 + sw2 * dot(X1, i, X1, i) * inv_d;
  for (std::size_t j = 0; j < n2; ++j) d2[j] = sb2 + sw2 * dot(X2, j, X2, j) * inv_d;
  Tensor K({n1, n2});
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j)
      K.data[i * n2 + j] = sb2 + sw2 * dot(X1, i, X2, j) * inv_d;

  for (int layer = 0; layer < cfg.depth; ++layer) {
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j)
        K.data[i * n2 + j] =
            sb2 + sw2 * gp_detail::relu_moment(d1[i], K.data[i * n2 + j], d2[j]);
    // relu_moment(k, k, k) = k / 2, so the diagonal update is closed-form.
    for (std::size_t i = 0; i < n1; ++i) d1[i] = sb2 + sw2 * 0.5 * d1[i];
    for (std::size_t j = 0; j < n2; ++j) d2[j] = sb2 + sw2 * 0.5 * d2[j];
  }
  check_finite(K, "nngp_kernel");
  return K;
}

namespace gp_detail {

// Cholesky with a jitter ladder. A zero base noise always starts at 1e-8;
// escalation stops at 1e-6.
inline Eigen::LLT<Mat> chol_with_jitter(const Mat& K, double base_noise) {
  const std::vector<double> ladder =
      base_noise > 0.0 ? std::vector<double>{0.0, 1e-8, 1e-6} : std::vector<double>{1e-8, 1e-6};
  for (double jitter : ladder) {
    Mat A = K;
    A.diagonal().array() += base_noise + jitter;
    Eigen::LLT<Mat> llt(A);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericsError("gp: Cholesky factorization failed after jitter escalation to 1e-6");
}

}  // namespace gp_detail

// Exact GP regression posterior over the test inputs:
//   mu  = K*^T (K + noise I)^-1 y
//   cov = K** - K*^T (K + noise I)^-1 K*
inline GPPosterior gp_posterior(const Tensor& X_train, const Tensor& y_train,
                                const Tensor& X_test, const NNGPConfig& cfg,
                                double noise_variance) {
  if (noise_variance < 0.0) throw UsageError("gp_posterior: noise_variance must be >= 0");
  const std::size_t n = X_train.dim(0), m = X_test.dim(0);
  GPPosterior post;
  post.noise_variance = noise_variance;
  Tensor Kss = nngp_kernel(X_test, X_test, cfg);
  if (n == 0) {
    post.mean = Tensor({m});
    post.covariance = Kss;
    return post;
  }
  if (y_train.size() != n) throw DimensionError("gp_posterior: y length != train count");

  gp_detail::Mat K = gp_detail::to_eigen(nngp_kernel(X_train, X_train, cfg));
  gp_detail::Mat Ks = gp_detail::to_eigen(nngp_kernel(X_train, X_test, cfg));  // n x m
  gp_detail::Vec y = Eigen::Map<const gp_detail::Vec>(y_train.data.data(), n);

  auto llt = gp_detail::chol_with_jitter(K, noise_variance);
  gp_detail::Vec alpha = llt.solve(y);
  gp_detail::Vec mu = Ks.transpose() * alpha;
  gp_detail::Mat V = llt.solve(Ks);                  // (K + nI)^-1 K*
  gp_detail::Mat cov = gp_detail::to_eigen(Kss) - Ks.transpose() * V;

  post.mean = Tensor({m});
  Eigen::Map<gp_detail::Vec>(post.mean.data.data(), m) = mu;
  post.covariance = Tensor({m, m});
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      post.covariance.data.data(), m, m) = cov;
  check_finite(post.mean, "gp_posterior mean");
  check_finite(post.covariance, "gp_posterior covariance");
  return post;
}

// Draw y = f + noise_std * xi with f ~ N(0, nngp_kernel(X, X)).
inline Tensor gp_prior_sample(const Tensor& X, const NNGPConfig& cfg, double noise_variance,
                              RngStream& rng) {
  const std::size_t n = X.dim(0);
  if (n < 1) throw UsageError("gp_prior_sample: need at least one input");
  gp_detail::Mat K = gp_detail::to_eigen(nngp_kernel(X, X, cfg));
  auto llt = gp_detail::chol_with_jitter(K, 0.0);
  gp_detail::Vec xi(n);
  for (std::size_t i = 0; i < n; ++i) xi[i] = rng.normal();
  gp_detail::Vec f = llt.matrixL() * xi;
  Tensor y({n});
  const double noise_std = std::sqrt(noise_variance);
  for (std::size_t i = 0; i < n; ++i) y.data[i] = f[i] + noise_std * rng.normal();
  check_finite(y, "gp_prior_sample");
  return y;
}

// ---- finite-width validation ---------------------------------------------

struct WideNetKernelEstimate {
  double k11 = 0.0, k12 = 0.0, k22 = 0.0;
};

// Empirical output covariance of finite-width random ReLU networks at a pair
// of inputs; the Monte Carlo check of the kernel recursion.
//
// The first hidden pre-activation is simulated with an explicit width x D
// Gaussian weight matrix. For deeper layers, each unit's pre-activation pair
// (h(x1), h(x2)) given the previous activations is an i.i.d. bivariate
// Gaussian whose 2x2 covariance follows from the weight distribution, so the
// pair is drawn from that exact conditional instead of materializing a
// width x width matrix. The readout layer's covariance is likewise computed
// conditionally on the last activations. Both shortcuts are distribution-
// exact consequences of Gaussian weights, not kernel-recursion facts, so the
// estimate remains an independent simulation of the recursion being checked.
inline WideNetKernelEstimate wide_network_kernel_estimate(const std::vector<double>& x1,
                                                          const std::vector<double>& x2,
                                                          const NNGPConfig& cfg, int width,
                                                          int n_nets, RngStream& rng) {
  if (x1.size() != x2.size()) throw DimensionError("wide_network_kernel_estimate: dim mismatch");
  if (width < 1 || n_nets < 1) throw UsageError("wide_network_kernel_estimate: bad sizes");
  const std::size_t D = x1.size();
  const double sw2 = cfg.weight_variance, sb2 = cfg.bias_variance;
  const double w_std0 = std::sqrt(sw2 / static_cast<double>(D));
  const double b_std = std::sqrt(sb2);

  WideNetKernelEstimate acc;
  std::vector<double> h1(width), h2(width);
  for (int net = 0; net < n_nets; ++net) {
    RngStream net_rng = rng.child(static_cast<std::uint64_t>(net));
    // explicit first layer: h = W x + b
    for (int u = 0; u < width; ++u) {
      double a1 = 0.0, a2 = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double w = w_std0 * net_rng.normal();
        a1 += w * x1[k];
        a2 += w * x2[k];
      }
      const double b = b_std * net_rng.normal();
      h1[u] = a1 + b;
      h2[u] = a2 + b;
    }
    // deeper layers: draw pre-activation pairs from the exact conditional
    for (int layer = 1; layer < cfg.depth; ++layer) {
      double g11 = 0.0, g12 = 0.0, g22 = 0.0;
      for (int u = 0; u < width; ++u) {
        const double r1 = h1[u] > 0.0 ? h1[u] : 0.0;
        const double r2 = h2[u] > 0.0 ? h2[u] : 0.0;
        g11 += r1 * r1;
        g12 += r1 * r2;
        g22 += r2 * r2;
      }
      const double s = sw2 / static_cast<double>(width);
      const double c11 = sb2 + s * g11, c12 = sb2 + s * g12, c22 = sb2 + s * g22;
      // 2x2 Cholesky of [[c11, c12], [c12, c22]]
      const double l11 = std::sqrt(std::max(c11, 0.0));
      const double l21 = l11 > 0.0 ? c12 / l11 : 0.0;
      const double l22 = std::sqrt(std::max(c22 - l21 * l21, 0.0));
      for (int u = 0; u < width; ++u) {
        const double z1 = net_rng.normal(), z2 = net_rng.normal();
        h1[u] = l11 * z1;
        h2[u] = l21 * z1 + l22 * z2;
      }
    }
    // readout covariance given the final activations
    double g11 = 0.0, g12 = 0.0, g22 = 0.0;
    for (int u = 0; u < width; ++u) {
      const double r1 = h1[u] > 0.0 ? h1[u] : 0.0;
      const double r2 = h2[u] > 0.0 ? h2[u] : 0.0;
      g11 += r1 * r1;
      g12 += r1 * r2;
      g22 += r2 * r2;
    }
    const double s = sw2 / static_cast<double>(width);
    acc.k11 += sb2 + s * g11;
    acc.k12 += sb2 + s * g12;
    acc.k22 += sb2 + s * g22;
  }
  acc.k11 /= n_nets;
  acc.k12 /= n_nets;
  acc.k22 /= n_nets;
  return acc;
}

}  // namespace vnn
