#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vnn/net.hpp"
#include "vnn/optim.hpp"
#include "vnn/rng.hpp"

namespace vnn {

enum class Loss { Mse, GaussianNll, CrossEntropy };

inline Loss loss_from_string(const std::string& s) {
  if (s == "mse") return Loss::Mse;
  if (s == "gaussian_nll") return Loss::GaussianNll;
  if (s == "cross_entropy") return Loss::CrossEntropy;
  throw ConfigError("unknown loss '" + s + "'");
}

struct TrainConfig {
  Loss loss = Loss::Mse;
  OptimizerConfig opt;
  int epochs = 10;
  std::size_t batch_size = 32;
  double nll_noise_std = 1.0;  // observation noise of the gaussian_nll likelihood
};

struct TrainData {
  Tensor inputs;            // [N x ...]
  Tensor targets;           // [N x out] for regression
  std::vector<int> labels;  // classification targets
  std::size_t size() const { return inputs.dim(0); }
};

struct TrainingTrace {
  std::vector<double> epoch_loss;
  long steps = 0;
};

namespace detail {

inline Tensor slice_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  const std::size_t row = t.size() / t.dim(0);
  Shape s = t.shape;
  s[0] = idx.size();
  Tensor out(std::move(s));
  for (std::size_t n = 0; n < idx.size(); ++n)
    std::copy(t.data.begin() + idx[n] * row, t.data.begin() + (idx[n] + 1) * row,
              out.data.begin() + n * row);
  return out;
}

}  // namespace detail

// Loss value and gradient w.r.t. the network output. Values are averaged so
// batch size does not change the gradient scale.
inline double loss_and_grad(Loss kind, const Tensor& y, const Tensor& targets,
                            const std::vector<int>& labels, double noise_std, Tensor& dy) {
  dy = Tensor(y.shape);
  const std::size_t B = y.dim(0);
  switch (kind) {
    case Loss::Mse: {
      require_same_shape(y, targets, "mse");
      const double scale = 1.0 / static_cast<double>(y.size());
      double loss = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y.data[i] - targets.data[i];
        loss += d * d * scale;
        dy.data[i] = 2.0 * d * scale;
      }
      return loss;
    }
    case Loss::GaussianNll: {
      require_same_shape(y, targets, "gaussian_nll");
      const double var = noise_std * noise_std;
      const double scale = 1.0 / static_cast<double>(y.size());
      const double c = 0.5 * std::log(2.0 * 3.14159265358979323846 * var);
      double loss = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y.data[i] - targets.data[i];
        loss += (0.5 * d * d / var + c) * scale;
        dy.data[i] = d / var * scale;
      }
      return loss;
    }
    case Loss::CrossEntropy: {
      if (labels.size() != B) throw DimensionError("cross_entropy: label count != batch size");
      Tensor p = ops::softmax_rows(y);
      const std::size_t C = y.dim(1);
      const double scale = 1.0 / static_cast<double>(B);
      double loss = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        const int t = labels[n];
        if (t < 0 || static_cast<std::size_t>(t) >= C)
          throw UsageError("cross_entropy: label out of range");
        loss -= std::log(std::max(p.data[n * C + t], 1e-300)) * scale;
        for (std::size_t c = 0; c < C; ++c)
          dy.data[n * C + c] = (p.data[n * C + c] - (static_cast<std::size_t>(t) == c)) * scale;
      }
      return loss;
    }
  }
  throw UsageError("unreachable loss kind");
}

// One fresh index draw per batch; returns the per-epoch mean objective.
// BBB adds (kl_weight / num_batches) * KL(q || prior) to every batch.
inline TrainingTrace train(Model& model, const TrainData& data, const TrainConfig& cfg,
                           RngStream rng) {
  if (data.size() == 0) throw UsageError("train: empty dataset");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (model.method.method == Method::Ensemble)
    throw UsageError("train: ensembles are trained via train_ensemble");

  const std::size_t N = data.size();
  const std::size_t bs = std::min(cfg.batch_size, N);
  const std::size_t num_batches = (N + bs - 1) / bs;
  Optimizer opt(cfg.opt);
  auto params = model.parameters();
  model.ensure_grads();

  TrainingTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream erng = rng.child(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle_rng = erng.child(0);
    for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.integer(i)]);

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b) {
      const std::size_t lo = b * bs, hi = std::min(lo + bs, N);
      std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);
      Tensor x = detail::slice_rows(data.inputs, idx);
      Tensor t;
      std::vector<int> labels;
      if (cfg.loss == Loss::CrossEntropy) {
        labels.reserve(idx.size());
        for (std::size_t i : idx) labels.push_back(data.labels[i]);
      } else {
        t = detail::slice_rows(data.targets, idx);
      }

      RngStream brng = erng.child(1 + b);
      EpistemicIndex z = model.draw_index(brng);
      Tensor y = model.forward_indexed(x, z);
      Tensor dy;
      double loss = loss_and_grad(cfg.loss, y, t, labels, cfg.nll_noise_std, dy);

      model.zero_grad();
      model.backward(dy);
      if (model.method.method == Method::Bbb && model.method.kl_weight != 0.0) {
        const double scale = model.method.kl_weight / static_cast<double>(num_batches);
        loss += scale * model.kl_to_prior();
        model.kl_to_prior_backward(scale);
      }
      if (!std::isfinite(loss)) {
        trace.epoch_loss.push_back(loss);
        throw TrainingError("training diverged: non-finite loss at epoch " +
                                std::to_string(epoch) + ", batch " + std::to_string(b),
                            trace.epoch_loss);
      }
      opt.step(params);
      epoch_loss += loss;
      trace.steps += 1;
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(num_batches));
  }
  return trace;
}

// K independently initialized and independently shuffled training runs.
inline Model train_ensemble(const Architecture& arch, const MethodConfig& cfg,
                            const TrainData& data, const TrainConfig& tcfg, RngStream rng,
                            std::vector<TrainingTrace>* traces = nullptr) {
  if (cfg.method != Method::Ensemble) throw UsageError("train_ensemble: method must be ensemble");
  RngStream init_rng = rng.child(0);
  Model m = Model::build(arch, cfg, init_rng);
  for (std::size_t k = 0; k < m.members.size(); ++k) {
    TrainingTrace tr = train(m.members[k], data, tcfg, rng.child(1 + k));
    if (traces) traces->push_back(std::move(tr));
  }
  return m;
}

// ---- evaluation helpers ---------------------------------------------------

inline double classification_accuracy(Model& model, const Tensor& inputs,
                                      const std::vector<int>& labels, int T, RngStream& rng) {
  Tensor p = predictive_class_probabilities(model, inputs, T, rng);
  const std::size_t B = p.dim(0), C = p.dim(1);
  std::size_t hits = 0;
  for (std::size_t n = 0; n < B; ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (p.data[n * C + c] > p.data[n * C + best]) best = c;
    if (static_cast<int>(best) == labels[n]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

// Mean Shannon entropy (nats) of the predictive class distribution.
inline double mean_predictive_entropy(Model& model, const Tensor& inputs, int T,
                                      RngStream& rng) {
  Tensor p = predictive_class_probabilities(model, inputs, T, rng);
  const std::size_t B = p.dim(0), C = p.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double v = p.data[n * C + c];
      if (v > 0.0) total -= v * std::log(v);
    }
  return total / static_cast<double>(B);
}

}  // namespace vnn
