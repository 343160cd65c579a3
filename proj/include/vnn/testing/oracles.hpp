#pragma once

// Independent reference implementations used to validate the production
// paths. Everything here is deliberately naive: plain loops, dense inverses,
// brute-force quadrature. Nothing in this header may call the implementation
// it is used to check.

#include <cmath>
#include <functional>
#include <vector>

#include "vnn/tensor.hpp"

namespace vnn::testing {

// y[n,o] = sum_i W[o,i] x[n,i] + b[o], triple loop.
inline Tensor naive_affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(0);
  Tensor y({B, O});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      double acc = b.data[o];
      for (std::size_t i = 0; i < I; ++i) acc += W.data[o * I + i] * x.data[n * I + i];
      y.data[n * O + o] = acc;
    }
  return y;
}

// Direct cross-correlation loops.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& K, const Tensor& b, int stride,
                           int padding) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  Tensor y({B, F, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oi = 0; oi < Ho; ++oi)
        for (std::size_t oj = 0; oj < Wo; ++oj) {
          double acc = b.data[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const long ii = static_cast<long>(oi) * stride + static_cast<long>(ki) - padding;
                const long jj = static_cast<long>(oj) * stride + static_cast<long>(kj) - padding;
                if (ii < 0 || ii >= static_cast<long>(H) || jj < 0 || jj >= static_cast<long>(W))
                  continue;
                acc += K.at(f, c, ki, kj) * x.at(n, c, ii, jj);
              }
          y.at(n, f, oi, oj) = acc;
        }
  return y;
}

// Gauss-Jordan inverse; O(n^3), no pivoting surprises at test scale.
inline std::vector<double> naive_inverse(std::vector<double> a, std::size_t n) {
  std::vector<double> inv(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (piv != col)
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a[col * n + c], a[piv * n + c]);
        std::swap(inv[col * n + c], inv[piv * n + c]);
      }
    const double d = a[col * n + col];
    if (d == 0.0) throw NumericsError("naive_inverse: singular matrix");
    for (std::size_t c = 0; c < n; ++c) {
      a[col * n + c] /= d;
      inv[col * n + c] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a[r * n + c] -= f * a[col * n + c];
        inv[r * n + c] -= f * inv[col * n + c];
      }
    }
  }
  return inv;
}

struct NaiveGpPosterior {
  std::vector<double> mean;
  std::vector<double> covariance;  // row-major n_test x n_test
};

// mu = Ks^T (K + noise I)^-1 y ; cov = Kss - Ks^T (K + noise I)^-1 Ks,
// via the explicit inverse. Kernel matrices are supplied by the caller so
// this stays independent of the solver being validated. The same jitter rule
// as the production path is applied (zero noise gets 1e-8) so the two
// computations target the same linear system.
inline NaiveGpPosterior naive_gp_posterior(const Tensor& K, const Tensor& Ks, const Tensor& Kss,
                                           const std::vector<double>& y, double noise_variance) {
  const std::size_t n = K.dim(0), m = Kss.dim(0);
  std::vector<double> a(K.data);
  const double add = noise_variance > 0.0 ? noise_variance : 1e-8;
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += add;
  const std::vector<double> inv = naive_inverse(std::move(a), n);

  // alpha = inv * y
  std::vector<double> alpha(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) alpha[i] += inv[i * n + j] * y[j];

  NaiveGpPosterior post;
  post.mean.assign(m, 0.0);
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t i = 0; i < n; ++i) post.mean[t] += Ks.at(i, t) * alpha[i];

  // V = inv * Ks  (n x m)
  std::vector<double> V(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double f = inv[i * n + j];
      if (f == 0.0) continue;
      for (std::size_t t = 0; t < m; ++t) V[i * m + t] += f * Ks.at(j, t);
    }
  post.covariance.assign(m * m, 0.0);
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t t = 0; t < m; ++t) {
      double acc = Kss.at(s, t);
      for (std::size_t i = 0; i < n; ++i) acc -= Ks.at(i, s) * V[i * m + t];
      post.covariance[s * m + t] = acc;
    }
  return post;
}

// KL(N(mu1, var1) || N(mu2, var2)) by composite Simpson quadrature of
// p log(p/q) over mu1 +- 12 sigma1.
inline double kl_gaussians_quadrature(double mu1, double var1, double mu2, double var2,
                                      int intervals = 20000) {
  const double s1 = std::sqrt(var1);
  const double lo = mu1 - 12.0 * s1, hi = mu1 + 12.0 * s1;
  const double h = (hi - lo) / intervals;
  auto integrand = [&](double x) {
    const double lp = -0.5 * std::log(2.0 * M_PI * var1) - (x - mu1) * (x - mu1) / (2.0 * var1);
    const double lq = -0.5 * std::log(2.0 * M_PI * var2) - (x - mu2) * (x - mu2) / (2.0 * var2);
    return std::exp(lp) * (lp - lq);
  };
  double acc = integrand(lo) + integrand(hi);
  for (int i = 1; i < intervals; ++i) acc += integrand(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Ten-line scalar adam; the reference trace for the optimizer.
struct ScalarAdamOracle {
  double lr, beta1, beta2, eps;
  double m = 0.0, v = 0.0;
  long t = 0;

  double step(double p, double g) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
    return p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// Least-squares fit of targets = X w + c via normal equations; reference for
// full-batch linear training. Returns {w..., c}.
inline std::vector<double> least_squares_fit(const Tensor& X, const std::vector<double>& y) {
  const std::size_t n = X.dim(0), d = X.dim(1);
  const std::size_t p = d + 1;
  std::vector<double> gram(p * p, 0.0), rhs(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(p, 1.0);
    for (std::size_t j = 0; j < d; ++j) row[j] = X.at(i, j);
    for (std::size_t a = 0; a < p; ++a) {
      rhs[a] += row[a] * y[i];
      for (std::size_t b = 0; b < p; ++b) gram[a * p + b] += row[a] * row[b];
    }
  }
  const std::vector<double> inv = naive_inverse(std::move(gram), p);
  std::vector<double> w(p, 0.0);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b) w[a] += inv[a * p + b] * rhs[b];
  return w;
}

}  // namespace vnn::testing
