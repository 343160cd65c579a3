#pragma once

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "vnn/gp.hpp"
#include "vnn/net.hpp"
#include "vnn/train.hpp"

namespace vnn {

// One cell of the uncertainty-quality grid.
struct BenchCell {
  int dx = 10;
  int lambda = 10;   // data-per-dimension ratio
  double eps = 0.1;  // aleatoric noise std

  std::size_t t_train() const { return static_cast<std::size_t>(dx) * lambda; }

  std::string id() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "dx%d_lam%d_eps%g", dx, lambda, eps);
    return buf;
  }
};

struct MethodSpec {
  std::string id;
  MethodConfig config;
};

struct BenchSuiteConfig {
  std::vector<int> dx_values{2, 10};
  std::vector<int> lambda_values{1, 10, 100};
  std::vector<double> eps_values{0.01, 0.1, 1.0};
  int n_test = 100;
  int t_mc = 100;
  std::uint64_t master_seed = 1;
  int n_seeds = 5;
  std::vector<MethodSpec> methods;
  TrainConfig train;
  std::size_t hidden = 50;  // regression MLP width
  NNGPConfig gp;            // oracle; input_dim filled per cell
  int jobs = 1;

  std::vector<BenchCell> cells() const {
    std::vector<BenchCell> out;
    for (int dx : dx_values)
      for (int lam : lambda_values)
        for (double eps : eps_values) out.push_back({dx, lam, eps});
    return out;
  }
  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < n_seeds; ++i) out.push_back(master_seed + static_cast<std::uint64_t>(i));
    return out;
  }
};

struct RegressionDataset {
  Tensor x_train;  // [T x dx]
  Tensor y_train;  // [T x 1]
  Tensor x_test;   // [n_test x dx]
  Tensor f_test;   // noiseless ground-truth values at the test inputs
};

// KL(N(mu1, var1) || N(mu2, var2)) in closed form.
inline double kl_univariate_gaussian(double mu1, double var1, double mu2, double var2) {
  if (var1 <= 0.0 || var2 <= 0.0)
    throw DomainError("kl_univariate_gaussian: variances must be positive");
  const double d = mu1 - mu2;
  return 0.5 * (std::log(var2 / var1) + (var1 + d * d) / var2 - 1.0);
}

namespace detail {

inline std::uint64_t label_of(double v) { return std::bit_cast<std::uint64_t>(v); }

inline std::uint64_t label_of(const std::string& s) {
  // FNV-1a; content-addressed rng paths keep results independent of ordering.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace detail

// Inputs i.i.d. standard normal; targets drawn from the oracle prior over the
// joint train+test inputs, with observation noise added to train targets only.
inline RegressionDataset generate_regression_dataset(const BenchCell& cell,
                                                     const NNGPConfig& gp_base, int n_test,
                                                     std::uint64_t seed) {
  RngStream rng = RngStream(seed)
                      .child(detail::label_of("data"))
                      .child(static_cast<std::uint64_t>(cell.dx))
                      .child(static_cast<std::uint64_t>(cell.lambda))
                      .child(detail::label_of(cell.eps));
  const std::size_t n_train = cell.t_train();
  const std::size_t dx = static_cast<std::size_t>(cell.dx);
  const std::size_t total = n_train + static_cast<std::size_t>(n_test);

  RngStream xrng = rng.child(0);
  Tensor x_all = xrng.standard_normal({total, dx});

  NNGPConfig gp = gp_base;
  gp.input_dim = cell.dx;
  RngStream frng = rng.child(1);
  Tensor f = gp_prior_sample(x_all, gp, 0.0, frng);

  RngStream nrng = rng.child(2);
  RegressionDataset ds;
  ds.x_train = Tensor({n_train, dx});
  ds.y_train = Tensor({n_train, 1});
  ds.x_test = Tensor({static_cast<std::size_t>(n_test), dx});
  ds.f_test = Tensor({static_cast<std::size_t>(n_test)});
  std::copy(x_all.data.begin(), x_all.data.begin() + n_train * dx, ds.x_train.data.begin());
  std::copy(x_all.data.begin() + n_train * dx, x_all.data.end(), ds.x_test.data.begin());
  for (std::size_t i = 0; i < n_train; ++i)
    ds.y_train.data[i] = f.data[i] + cell.eps * nrng.normal();
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_test); ++i)
    ds.f_test.data[i] = f.data[n_train + i];
  return ds;
}

struct KLResult {
  std::string config_id;
  std::string method_id;
  std::uint64_t seed = 0;
  double mean_kl = 0.0;
  std::vector<double> kl;  // per test point
  double loss_first = 0.0, loss_final = 0.0;
  bool ok = true;
  std::string error;
};

// Per-point KL between the exact posterior marginal and the model's
// Monte Carlo predictive, both widened by the aleatoric noise variance.
// Model variance is floored at 1e-8 before the widening.
inline KLResult evaluate_uncertainty_quality(Model& model, const GPPosterior& oracle,
                                             const Tensor& X_test, int t_mc, RngStream& rng) {
  const std::size_t n = X_test.dim(0);
  if (oracle.mean.dim(0) != n)
    throw UsageError("evaluate_uncertainty_quality: oracle does not cover X_test");
  PredictiveSummary pm = predictive_moments(model, X_test, t_mc, rng);
  if (pm.mean.size() != n)
    throw UsageError("evaluate_uncertainty_quality: model output is not scalar per point");
  KLResult r;
  r.kl.resize(n);
  const double noise = oracle.noise_variance;
  for (std::size_t i = 0; i < n; ++i) {
    const double var_gp = oracle.covariance.at(i, i) + noise;
    const double var_model = std::max(pm.variance.data[i], 1e-8) + noise;
    r.kl[i] = kl_univariate_gaussian(oracle.mean.data[i], var_gp, pm.mean.data[i], var_model);
    r.mean_kl += r.kl[i];
  }
  r.mean_kl /= static_cast<double>(n);
  return r;
}

struct BenchAggregate {
  std::string config_id;
  int dx = 0;
  int lambda = 0;
  double eps = 0.0;
  std::string method_id;
  int seeds = 0;  // runs that succeeded
  double mean_kl = 0.0;
  double std_kl = 0.0;
};

struct BenchRunRecord {
  BenchCell cell;
  KLResult result;
};

struct BenchResults {
  std::vector<BenchRunRecord> runs;        // (cell, method, seed) order
  std::vector<BenchAggregate> aggregates;  // (cell, method) order
  int failures = 0;
};

// Trains and scores one method on one (cell, seed) dataset/oracle pair.
inline KLResult run_benchmark_case(const BenchSuiteConfig& suite, const BenchCell& cell,
                                   const MethodSpec& method, std::uint64_t seed,
                                   const RegressionDataset& data, const GPPosterior& oracle) {
  KLResult r;
  r.config_id = cell.id();
  r.method_id = method.id;
  r.seed = seed;
  try {
    Architecture arch = regression_mlp(static_cast<std::size_t>(cell.dx), suite.hidden);
    RngStream model_rng = RngStream(seed)
                              .child(detail::label_of("model"))
                              .child(detail::label_of(cell.id()))
                              .child(detail::label_of(method.id));
    TrainData td;
    td.inputs = data.x_train;
    td.targets = data.y_train;

    Model model;
    std::vector<TrainingTrace> traces;
    if (method.config.method == Method::Ensemble) {
      model = train_ensemble(arch, method.config, td, suite.train, model_rng.child(0), &traces);
    } else {
      RngStream init_rng = model_rng.child(0);
      model = Model::build(arch, method.config, init_rng);
      traces.push_back(train(model, td, suite.train, model_rng.child(1)));
    }
    r.loss_first = traces.front().epoch_loss.front();
    r.loss_final = traces.back().epoch_loss.back();

    RngStream eval_rng = model_rng.child(2);
    KLResult scored = evaluate_uncertainty_quality(model, oracle, data.x_test, suite.t_mc,
                                                   eval_rng);
    r.mean_kl = scored.mean_kl;
    r.kl = std::move(scored.kl);
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

// Full grid: for every (cell, seed) generate data and the oracle once, then
// train and score every method. (cell, seed) tasks are independent and may
// run on several threads; output order and content do not depend on the
// schedule.
inline BenchResults run_benchmark_suite(const BenchSuiteConfig& suite) {
  const auto cells = suite.cells();
  const auto seeds = suite.seeds();
  struct Task {
    std::size_t cell_idx, seed_idx;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < seeds.size(); ++s) tasks.push_back({c, s});

  std::vector<std::vector<KLResult>> slots(tasks.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t t = cursor.fetch_add(1);
      if (t >= tasks.size()) return;
      const BenchCell& cell = cells[tasks[t].cell_idx];
      const std::uint64_t seed = seeds[tasks[t].seed_idx];
      NNGPConfig gp = suite.gp;
      gp.input_dim = cell.dx;
      RegressionDataset data =
          generate_regression_dataset(cell, suite.gp, suite.n_test, seed);
      GPPosterior oracle =
          gp_posterior(data.x_train, data.y_train.reshaped({data.y_train.dim(0)}), data.x_test,
                       gp, cell.eps * cell.eps);
      std::vector<KLResult>& out = slots[t];
      for (const MethodSpec& m : suite.methods)
        out.push_back(run_benchmark_case(suite, cell, m, seed, data, oracle));
    }
  };
  const int jobs = std::max(1, suite.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  BenchResults results;
  // runs ordered (cell, method, seed); aggregates ordered (cell, method)
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t m = 0; m < suite.methods.size(); ++m) {
      BenchAggregate agg;
      agg.config_id = cells[c].id();
      agg.dx = cells[c].dx;
      agg.lambda = cells[c].lambda;
      agg.eps = cells[c].eps;
      agg.method_id = suite.methods[m].id;
      std::vector<double> vals;
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        const KLResult& r = slots[c * seeds.size() + s][m];
        results.runs.push_back({cells[c], r});
        if (r.ok)
          vals.push_back(r.mean_kl);
        else
          results.failures += 1;
      }
      agg.seeds = static_cast<int>(vals.size());
      if (!vals.empty()) {
        for (double v : vals) agg.mean_kl += v;
        agg.mean_kl /= static_cast<double>(vals.size());
        if (vals.size() > 1) {
          double ss = 0.0;
          for (double v : vals) ss += (v - agg.mean_kl) * (v - agg.mean_kl);
          agg.std_kl = std::sqrt(ss / static_cast<double>(vals.size() - 1));
        }
      }
      results.aggregates.push_back(agg);
    }
  }
  return results;
}

}  // namespace vnn
