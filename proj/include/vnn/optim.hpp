#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vnn/tensor.hpp"

namespace vnn {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  long step_count = 0;
  std::vector<double> first_moment;   // adam only, concatenated over params
  std::vector<double> second_moment;  // adam only
};

// In-place parameter updates. The parameter list must be the same (same
// tensors, same order, same sizes) on every step.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { st_.kind = cfg.kind; }

  const OptimizerConfig& config() const { return cfg_; }
  const OptimizerState& state() const { return st_; }

  void step(const std::vector<Tensor*>& params) {
    std::size_t total = 0;
    for (const Tensor* p : params) {
      if (!p->has_grad()) throw UsageError("optimizer: parameter has no gradient buffer");
      total += p->size();
    }
    st_.step_count += 1;
    if (cfg_.kind == OptimizerKind::Sgd) {
      for (Tensor* p : params)
        for (std::size_t i = 0; i < p->size(); ++i)
          p->data[i] -= cfg_.learning_rate * (p->grad[i] + cfg_.weight_decay * p->data[i]);
      return;
    }
    if (st_.first_moment.empty()) {
      st_.first_moment.assign(total, 0.0);
      st_.second_moment.assign(total, 0.0);
    } else if (st_.first_moment.size() != total) {
      throw UsageError("optimizer: parameter vector length changed between steps");
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st_.step_count));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st_.step_count));
    std::size_t off = 0;
    for (Tensor* p : params) {
      for (std::size_t i = 0; i < p->size(); ++i, ++off) {
        const double g = p->grad[i] + cfg_.weight_decay * p->data[i];
        double& m = st_.first_moment[off];
        double& v = st_.second_moment[off];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p->data[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  OptimizerState st_;
};

// Convenience matching the one-shot call shape used in tests.
inline void optimizer_step(const std::vector<Tensor*>& params, Optimizer& opt) {
  opt.step(params);
}

}  // namespace vnn
