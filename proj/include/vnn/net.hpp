#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "vnn/layers.hpp"
#include "vnn/ops.hpp"
#include "vnn/rng.hpp"
#include "vnn/tensor.hpp"

namespace vnn {

enum class Method { Deterministic, Vnn, Bbb, Mcd, Ensemble, Hypermodel };

inline Method method_from_string(const std::string& s) {
  if (s == "deterministic") return Method::Deterministic;
  if (s == "vnn") return Method::Vnn;
  if (s == "bbb") return Method::Bbb;
  if (s == "mcd") return Method::Mcd;
  if (s == "ensemble") return Method::Ensemble;
  if (s == "hypermodel") return Method::Hypermodel;
  throw ConfigError("unknown method '" + s + "'");
}

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Deterministic: return "deterministic";
    case Method::Vnn: return "vnn";
    case Method::Bbb: return "bbb";
    case Method::Mcd: return "mcd";
    case Method::Ensemble: return "ensemble";
    case Method::Hypermodel: return "hypermodel";
  }
  return "?";
}

struct MethodConfig {
  Method method = Method::Deterministic;
  // mcd
  double dropout_rate = 0.1;
  // bbb
  double prior_std = 1.0;
  double kl_weight = 1.0;
  double rho_init_frac = 0.05;  // initial weight std as a fraction of prior_std
  // ensemble
  int ensemble_size = 10;
  // hypermodel
  int index_dim = 8;
  double hm_init_scale = 1.0;
  // vnn
  double sigma_init = 0.1;  // initial constant output std of each sigma branch
};

struct LayerSpec {
  enum class Kind { Dense, Conv2d, Flatten, Activation };
  Kind kind = Kind::Dense;
  std::size_t units = 0;     // dense output width
  std::size_t channels = 0;  // conv output channels
  std::size_t ksize = 3;
  int stride = 1;
  int padding = 0;
  Activation act = Activation::Identity;

  static LayerSpec dense(std::size_t units) {
    LayerSpec s;
    s.kind = Kind::Dense;
    s.units = units;
    return s;
  }
  static LayerSpec conv2d(std::size_t channels, std::size_t ksize, int stride, int padding) {
    LayerSpec s;
    s.kind = Kind::Conv2d;
    s.channels = channels;
    s.ksize = ksize;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = Kind::Flatten;
    return s;
  }
  static LayerSpec activation(Activation a) {
    LayerSpec s;
    s.kind = Kind::Activation;
    s.act = a;
    return s;
  }
};

struct Architecture {
  std::string name;
  Shape input_shape;  // without the batch dimension
  std::vector<LayerSpec> layers;
};

// Output shape (without batch) of one spec applied to an input shape.
inline Shape spec_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerSpec::Kind::Dense:
      if (in.size() != 1) throw DimensionError("dense layer expects flat input, got " + shape_str(in));
      return {spec.units};
    case LayerSpec::Kind::Conv2d: {
      if (in.size() != 3) throw DimensionError("conv2d layer expects CxHxW input, got " + shape_str(in));
      Tensor x({1, in[0], in[1], in[2]});
      Tensor K({spec.channels, in[0], spec.ksize, spec.ksize});
      Tensor b({spec.channels});
      const ops::ConvDims d = ops::conv2d_dims(x, K, b, spec.stride, spec.padding);
      return {d.F, d.Ho, d.Wo};
    }
    case LayerSpec::Kind::Flatten:
      return {numel(in)};
    case LayerSpec::Kind::Activation:
      return in;
  }
  throw UsageError("unreachable layer kind");
}

inline std::vector<Shape> architecture_shapes(const Architecture& arch) {
  std::vector<Shape> shapes;
  Shape cur = arch.input_shape;
  for (const LayerSpec& spec : arch.layers) {
    cur = spec_output_shape(spec, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

inline std::size_t architecture_output_dim(const Architecture& arch) {
  const auto shapes = architecture_shapes(arch);
  if (shapes.empty()) return numel(arch.input_shape);
  return numel(shapes.back());
}

// ---- presets ----------------------------------------------------------

// Two-hidden-layer ReLU MLP used for the synthetic regression task; mirrors
// the depth of the GP oracle so both describe the same function class.
inline Architecture regression_mlp(std::size_t input_dim, std::size_t hidden = 50) {
  Architecture a;
  a.name = "reg-mlp";
  a.input_shape = {input_dim};
  a.layers = {LayerSpec::dense(hidden), LayerSpec::activation(Activation::Relu),
              LayerSpec::dense(hidden), LayerSpec::activation(Activation::Relu),
              LayerSpec::dense(1)};
  return a;
}

// Three fully connected layers for MNIST.
inline Architecture mnist_mlp() {
  Architecture a;
  a.name = "mlp";
  a.input_shape = {784};
  a.layers = {LayerSpec::dense(256), LayerSpec::activation(Activation::Relu),
              LayerSpec::dense(128), LayerSpec::activation(Activation::Relu),
              LayerSpec::dense(10)};
  return a;
}

// Three convolutional layers plus one fully connected head; mini/micro keep
// the structure but shrink the channel counts.
inline Architecture mnist_cnn(std::size_t c1, std::size_t c2, std::size_t c3,
                              const std::string& name) {
  Architecture a;
  a.name = name;
  a.input_shape = {1, 28, 28};
  a.layers = {LayerSpec::conv2d(c1, 3, 1, 1), LayerSpec::activation(Activation::Relu),
              LayerSpec::conv2d(c2, 3, 2, 1), LayerSpec::activation(Activation::Relu),
              LayerSpec::conv2d(c3, 3, 2, 1), LayerSpec::activation(Activation::Relu),
              LayerSpec::flatten(),           LayerSpec::dense(10)};
  return a;
}

inline Architecture make_architecture(const std::string& name, std::size_t input_dim = 0) {
  if (name == "reg-mlp") return regression_mlp(input_dim ? input_dim : 10);
  if (name == "mlp") return mnist_mlp();
  if (name == "base") return mnist_cnn(32, 64, 64, name);
  if (name == "mini") return mnist_cnn(16, 32, 32, name);
  if (name == "micro") return mnist_cnn(8, 16, 16, name);
  throw ConfigError("unknown architecture '" + name + "'");
}

// ---- epistemic index ---------------------------------------------------

// One draw from the base distribution p(z). Together with the trained
// parameters it fully determines a stochastic forward pass.
struct EpistemicIndex {
  Method method = Method::Deterministic;
  std::vector<Tensor> gaussians;  // vnn: one per layer; bbb: (z_W, z_b) pairs; hypermodel: one [d_z]
  std::uint64_t mask_seed = 0;    // mcd
  int member = -1;                // ensemble
};

struct IndexLayout {
  Method method = Method::Deterministic;
  std::vector<Shape> gaussian_shapes;
  bool wants_mask_seed = false;
  int categorical = 0;  // ensemble member count
};

inline IndexLayout compute_index_layout(const Architecture& arch, const MethodConfig& cfg) {
  IndexLayout layout;
  layout.method = cfg.method;
  Shape cur = arch.input_shape;
  for (const LayerSpec& spec : arch.layers) {
    const Shape out = spec_output_shape(spec, cur);
    const bool parametric =
        spec.kind == LayerSpec::Kind::Dense || spec.kind == LayerSpec::Kind::Conv2d;
    if (parametric && cfg.method == Method::Vnn) {
      layout.gaussian_shapes.push_back(out);
    } else if (parametric && cfg.method == Method::Bbb) {
      if (spec.kind == LayerSpec::Kind::Dense) {
        layout.gaussian_shapes.push_back({spec.units, cur[0]});
        layout.gaussian_shapes.push_back({spec.units});
      } else {
        layout.gaussian_shapes.push_back({spec.channels, cur[0], spec.ksize, spec.ksize});
        layout.gaussian_shapes.push_back({spec.channels});
      }
    }
    cur = out;
  }
  if (cfg.method == Method::Mcd) layout.wants_mask_seed = true;
  if (cfg.method == Method::Ensemble) layout.categorical = cfg.ensemble_size;
  if (cfg.method == Method::Hypermodel)
    layout.gaussian_shapes = {Shape{static_cast<std::size_t>(cfg.index_dim)}};
  return layout;
}

inline EpistemicIndex draw_index(const IndexLayout& layout, RngStream& rng) {
  EpistemicIndex z;
  z.method = layout.method;
  for (const Shape& s : layout.gaussian_shapes) z.gaussians.push_back(rng.standard_normal(s));
  if (layout.wants_mask_seed) z.mask_seed = rng.next_u64();
  if (layout.categorical > 0)
    z.member = static_cast<int>(rng.integer(static_cast<std::uint64_t>(layout.categorical)));
  return z;
}

inline EpistemicIndex draw_index(const MethodConfig& cfg, const Architecture& arch,
                                 RngStream& rng) {
  return draw_index(compute_index_layout(arch, cfg), rng);
}

// ---- hypermodel ---------------------------------------------------------

// Linear hypermodel: theta = a + B z generates the base-model parameters.
struct HypermodelParams {
  Tensor a;  // [P]
  Tensor B;  // [P x d_z]
};

inline std::vector<double> hypermodel_materialize(const HypermodelParams& p,
                                                  const std::vector<double>& z) {
  const std::size_t P = p.a.dim(0), dz = p.B.dim(1);
  if (p.B.dim(0) != P) throw UsageError("hypermodel: a and B row counts disagree");
  if (z.size() != dz)
    throw UsageError("hypermodel: index length " + std::to_string(z.size()) + " != d_z " +
                     std::to_string(dz));
  std::vector<double> theta(p.a.data);
  for (std::size_t i = 0; i < P; ++i) {
    const double* row = p.B.data.data() + i * dz;
    double acc = 0.0;
    for (std::size_t j = 0; j < dz; ++j) acc += row[j] * z[j];
    theta[i] += acc;
  }
  return theta;
}

// ---- layer stack --------------------------------------------------------

struct PassContext {
  const EpistemicIndex* index = nullptr;
  std::size_t site = 0;  // cursor into index->gaussians, and dropout site ordinal
};

namespace detail {

// Tile a per-site draw (shape without batch) across the batch dimension.
inline Tensor broadcast_rows(const Tensor& site, std::size_t batch) {
  Shape s = site.shape;
  s.insert(s.begin(), batch);
  Tensor out(std::move(s));
  for (std::size_t n = 0; n < batch; ++n)
    std::copy(site.data.begin(), site.data.end(), out.data.begin() + n * site.size());
  return out;
}

inline const Tensor& next_site(PassContext& ctx, const Shape& expect, const char* what) {
  if (!ctx.index || ctx.site >= ctx.index->gaussians.size())
    throw UsageError(std::string(what) + ": epistemic index has too few gaussian sites");
  const Tensor& t = ctx.index->gaussians[ctx.site++];
  if (t.shape != expect)
    throw UsageError(std::string(what) + ": index site shape " + shape_str(t.shape) +
                     " != expected " + shape_str(expect));
  return t;
}

}  // namespace detail

struct DenseLayer {
  DenseParams p;
  Tensor x_cache;

  Tensor forward(const Tensor& x, PassContext&) {
    x_cache = x;
    return ops::affine(x, p.W, p.b);
  }
  Tensor backward(const Tensor& dy, bool want_dx) {
    if (want_dx) x_cache.ensure_grad();
    ops::affine_backward(x_cache, p.W, p.b, dy);
    Tensor dx;
    if (want_dx) {
      dx = Tensor(x_cache.shape, x_cache.grad);
      x_cache.grad.clear();
    }
    return dx;
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&p.W);
    out.push_back(&p.b);
  }
};

struct Conv2dLayer {
  ConvParams p;
  Tensor x_cache;

  Tensor forward(const Tensor& x, PassContext&) {
    x_cache = x;
    return ops::conv2d(x, p.K, p.b, p.stride, p.padding);
  }
  Tensor backward(const Tensor& dy, bool want_dx) {
    if (want_dx) x_cache.ensure_grad();
    ops::conv2d_backward(x_cache, p.K, p.b, p.stride, p.padding, dy);
    Tensor dx;
    if (want_dx) {
      dx = Tensor(x_cache.shape, x_cache.grad);
      x_cache.grad.clear();
    }
    return dx;
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&p.K);
    out.push_back(&p.b);
  }
};

struct FlattenLayer {
  Shape in_shape;  // cached full input shape including batch

  Tensor forward(const Tensor& x, PassContext&) {
    in_shape = x.shape;
    return x.reshaped({x.dim(0), numel(x.shape) / x.dim(0)});
  }
  Tensor backward(const Tensor& dy, bool) { return dy.reshaped(in_shape); }
  void collect(std::vector<Tensor*>&) {}
};

struct ActivationLayer {
  Activation kind = Activation::Identity;
  Tensor pre_cache;

  Tensor forward(const Tensor& x, PassContext&) {
    pre_cache = x;
    return ops::activation(x, kind);
  }
  Tensor backward(const Tensor& dy, bool) {
    return ops::activation_backward(pre_cache, dy, kind);
  }
  void collect(std::vector<Tensor*>&) {}
};

struct DropoutLayer {
  DropoutConfig cfg;
  Tensor mask_cache;

  Tensor forward(const Tensor& x, PassContext& ctx) {
    if (!ctx.index) throw UsageError("dropout layer: missing epistemic index");
    RngStream rng = RngStream(ctx.index->mask_seed).child(ctx.site++);
    return dropout_forward(x, cfg, rng, &mask_cache);
  }
  Tensor backward(const Tensor& dy, bool) { return dropout_backward(dy, mask_cache); }
  void collect(std::vector<Tensor*>&) {}
};

struct VariationalDenseLayer {
  VariationalDenseParams p;
  VariationalCache cache;

  Tensor forward(const Tensor& x, PassContext& ctx) {
    const Tensor& site = detail::next_site(ctx, {p.mu.W.dim(0)}, "variational dense");
    return variational_dense_forward(x, p, detail::broadcast_rows(site, x.dim(0)), &cache);
  }
  Tensor backward(const Tensor& dy, bool want_dx) {
    return variational_dense_backward(dy, p, cache, want_dx);
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&p.mu.W);
    out.push_back(&p.mu.b);
    out.push_back(&p.sigma.W);
    out.push_back(&p.sigma.b);
  }
};

struct VariationalConvLayer {
  VariationalConvParams p;
  Shape site_shape;  // F x Ho x Wo for the configured input size
  VariationalCache cache;

  Tensor forward(const Tensor& x, PassContext& ctx) {
    const Tensor& site = detail::next_site(ctx, site_shape, "variational conv");
    return variational_conv_forward(x, p, detail::broadcast_rows(site, x.dim(0)), &cache);
  }
  Tensor backward(const Tensor& dy, bool want_dx) {
    return variational_conv_backward(dy, p, cache, want_dx);
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&p.mu.K);
    out.push_back(&p.mu.b);
    out.push_back(&p.sigma.K);
    out.push_back(&p.sigma.b);
  }
};

struct BbbDenseLayer {
  BbbDenseParams p;
  BbbCache cache;

  Tensor forward(const Tensor& x, PassContext& ctx) {
    const Tensor& zW = detail::next_site(ctx, p.mean.W.shape, "bbb dense W");
    const Tensor& zb = detail::next_site(ctx, p.mean.b.shape, "bbb dense b");
    return bbb_dense_forward(x, p, zW, zb, &cache);
  }
  Tensor backward(const Tensor& dy, bool want_dx) {
    return bbb_dense_backward(dy, p, cache, want_dx);
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&p.mean.W);
    out.push_back(&p.mean.b);
    out.push_back(&p.rho.W);
    out.push_back(&p.rho.b);
  }
};

struct BbbConvLayer {
  BbbConvParams p;
  BbbCache cache;

  Tensor forward(const Tensor& x, PassContext& ctx) {
    const Tensor& zK = detail::next_site(ctx, p.mean.K.shape, "bbb conv K");
    const Tensor& zb = detail::next_site(ctx, p.mean.b.shape, "bbb conv b");
    return bbb_conv_forward(x, p, zK, zb, &cache);
  }
  Tensor backward(const Tensor& dy, bool want_dx) {
    return bbb_conv_backward(dy, p, cache, want_dx);
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&p.mean.K);
    out.push_back(&p.mean.b);
    out.push_back(&p.rho.K);
    out.push_back(&p.rho.b);
  }
};

using Layer = std::variant<DenseLayer, Conv2dLayer, FlattenLayer, ActivationLayer, DropoutLayer,
                           VariationalDenseLayer, VariationalConvLayer, BbbDenseLayer,
                           BbbConvLayer>;

// ---- model --------------------------------------------------------------

struct PredictiveSummary {
  Tensor mean;      // [B x out]
  Tensor variance;  // [B x out], diagonal of Cov[y]
  int sample_count = 0;
};

class Model {
 public:
  Architecture arch;
  MethodConfig method;
  std::vector<Layer> layers;   // stack (also the hypermodel's base network)
  std::vector<Model> members;  // ensemble
  HypermodelParams hm;
  IndexLayout index_layout;

  static Model build(const Architecture& arch, const MethodConfig& cfg, RngStream& init_rng);

  std::size_t output_dim() const { return architecture_output_dim(arch); }

  // Trainable parameters, in a stable order.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    if (method.method == Method::Hypermodel) {
      out.push_back(&hm.a);
      out.push_back(&hm.B);
      return out;
    }
    if (method.method == Method::Ensemble) {
      for (Model& m : members) {
        auto sub = m.parameters();
        out.insert(out.end(), sub.begin(), sub.end());
      }
      return out;
    }
    for (Layer& l : layers)
      std::visit([&](auto& layer) { layer.collect(out); }, l);
    return out;
  }

  void ensure_grads() {
    for (Tensor* t : parameters()) t->ensure_grad();
    if (method.method == Method::Hypermodel) base_ensure_grads();
  }

  void zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
  }

  EpistemicIndex draw_index(RngStream& rng) const { return vnn::draw_index(index_layout, rng); }

  // Deterministic function of (parameters, x, z).
  Tensor forward_indexed(const Tensor& x, const EpistemicIndex& z) {
    validate_index(z);
    if (method.method == Method::Ensemble) return members[z.member].forward_deterministic(x);
    if (method.method == Method::Hypermodel) {
      scatter_base_params(hypermodel_materialize(hm, z.gaussians[0].data));
      hm_z_cache = z.gaussians[0].data;
      return run_stack(x, nullptr);
    }
    PassContext ctx{&z, 0};
    return run_stack(x, &ctx);
  }

  // Backward through the last forward_indexed; accumulates into parameter
  // gradients and returns nothing (inputs do not need gradients here).
  void backward(const Tensor& dy) {
    if (method.method == Method::Ensemble)
      throw UsageError("ensemble members are trained individually; no joint backward");
    if (method.method == Method::Hypermodel) {
      base_zero_grads();
      backprop_stack(dy);
      // theta = a + B z  =>  da += dtheta, dB += dtheta z^T
      std::size_t off = 0;
      const std::size_t dz = hm.B.dim(1);
      for (Tensor* t : base_parameters()) {
        for (std::size_t i = 0; i < t->size(); ++i, ++off) {
          const double g = t->grad[i];
          hm.a.grad[off] += g;
          for (std::size_t j = 0; j < dz; ++j) hm.B.grad[off * dz + j] += g * hm_z_cache[j];
        }
      }
      return;
    }
    backprop_stack(dy);
  }

  // Sum of the closed-form KL regularizers of all bbb layers.
  double kl_to_prior() const {
    double kl = 0.0;
    for (const Layer& l : layers) {
      if (const auto* d = std::get_if<BbbDenseLayer>(&l)) kl += bbb_kl_to_prior(d->p);
      if (const auto* c = std::get_if<BbbConvLayer>(&l)) kl += bbb_kl_to_prior(c->p);
    }
    return kl;
  }

  // Accumulates gradients of scale * kl_to_prior() into bbb parameters.
  void kl_to_prior_backward(double scale) {
    for (Layer& l : layers) {
      if (auto* d = std::get_if<BbbDenseLayer>(&l)) {
        detail::bbb_kl_tensor_backward(d->p.mean.W, d->p.rho.W, d->p.prior_std, scale);
        detail::bbb_kl_tensor_backward(d->p.mean.b, d->p.rho.b, d->p.prior_std, scale);
      }
      if (auto* c = std::get_if<BbbConvLayer>(&l)) {
        detail::bbb_kl_tensor_backward(c->p.mean.K, c->p.rho.K, c->p.prior_std, scale);
        detail::bbb_kl_tensor_backward(c->p.mean.b, c->p.rho.b, c->p.prior_std, scale);
      }
    }
  }

  std::vector<Tensor*> base_parameters() {
    std::vector<Tensor*> out;
    for (Layer& l : layers)
      std::visit([&](auto& layer) { layer.collect(out); }, l);
    return out;
  }

 private:
  std::vector<double> hm_z_cache;

  Tensor forward_deterministic(const Tensor& x) { return run_stack(x, nullptr); }

  Tensor run_stack(const Tensor& x, PassContext* ctx) {
    PassContext empty{};
    PassContext& c = ctx ? *ctx : empty;
    Tensor cur = x;
    for (Layer& l : layers)
      cur = std::visit([&](auto& layer) { return layer.forward(cur, c); }, l);
    return cur;
  }

  void backprop_stack(const Tensor& dy) {
    Tensor cur = dy;
    for (std::size_t i = layers.size(); i-- > 0;) {
      const bool want_dx = i > 0;
      cur = std::visit([&](auto& layer) { return layer.backward(cur, want_dx); }, layers[i]);
    }
  }

  void base_ensure_grads() {
    for (Tensor* t : base_parameters()) t->ensure_grad();
  }
  void base_zero_grads() {
    for (Tensor* t : base_parameters()) t->zero_grad();
  }

  void scatter_base_params(const std::vector<double>& theta) {
    std::size_t off = 0;
    for (Tensor* t : base_parameters()) {
      std::copy(theta.begin() + off, theta.begin() + off + t->size(), t->data.begin());
      off += t->size();
    }
    if (off != theta.size()) throw UsageError("hypermodel: parameter count mismatch");
  }

  void validate_index(const EpistemicIndex& z) const {
    if (z.method != method.method)
      throw UsageError(std::string("epistemic index drawn for method '") + method_name(z.method) +
                       "' used with '" + method_name(method.method) + "' model");
    if (z.gaussians.size() != index_layout.gaussian_shapes.size())
      throw UsageError("epistemic index site count mismatch");
    if (method.method == Method::Ensemble &&
        (z.member < 0 || z.member >= static_cast<int>(members.size())))
      throw UsageError("epistemic index member id out of range");
  }
};

// ---- construction -------------------------------------------------------

namespace detail {

// Fan-in-scaled uniform init matching the weight-variance convention of the
// GP oracle (var = 2 / fan_in).
inline void init_weight(Tensor& W, std::size_t fan_in, RngStream& rng) {
  const double bound = std::sqrt(3.0 * 2.0 / static_cast<double>(fan_in));
  rng.fill_uniform(W, -bound, bound);
}

inline DenseParams make_dense(std::size_t in, std::size_t out, RngStream& rng) {
  DenseParams p;
  p.W = Tensor({out, in});
  p.b = Tensor({out});
  init_weight(p.W, in, rng);
  return p;
}

inline ConvParams make_conv(std::size_t in_ch, const LayerSpec& spec, RngStream& rng) {
  ConvParams p;
  p.K = Tensor({spec.channels, in_ch, spec.ksize, spec.ksize});
  p.b = Tensor({spec.channels});
  p.stride = spec.stride;
  p.padding = spec.padding;
  init_weight(p.K, in_ch * spec.ksize * spec.ksize, rng);
  return p;
}

}  // namespace detail

inline Model Model::build(const Architecture& arch, const MethodConfig& cfg,
                          RngStream& init_rng) {
  Model m;
  m.arch = arch;
  m.method = cfg;
  m.index_layout = compute_index_layout(arch, cfg);

  if (cfg.method == Method::Ensemble) {
    if (cfg.ensemble_size < 1) throw ConfigError("ensemble: size must be >= 1");
    MethodConfig sub;
    sub.method = Method::Deterministic;
    for (int k = 0; k < cfg.ensemble_size; ++k) {
      RngStream member_rng = init_rng.child(static_cast<std::uint64_t>(k));
      m.members.push_back(Model::build(arch, sub, member_rng));
    }
    return m;
  }

  const bool plain = cfg.method == Method::Deterministic || cfg.method == Method::Mcd ||
                     cfg.method == Method::Ensemble || cfg.method == Method::Hypermodel;
  Shape cur = arch.input_shape;
  std::uint64_t label = 0;
  for (const LayerSpec& spec : arch.layers) {
    RngStream layer_rng = init_rng.child(label++);
    const Shape out = spec_output_shape(spec, cur);
    switch (spec.kind) {
      case LayerSpec::Kind::Dense: {
        if (plain) {
          m.layers.push_back(DenseLayer{detail::make_dense(cur[0], spec.units, layer_rng)});
        } else if (cfg.method == Method::Vnn) {
          VariationalDenseLayer l;
          l.p.mu = detail::make_dense(cur[0], spec.units, layer_rng);
          l.p.sigma.W = Tensor({spec.units, cur[0]});
          l.p.sigma.b = Tensor::full({spec.units}, cfg.sigma_init);
          m.layers.push_back(std::move(l));
        } else {  // bbb
          BbbDenseLayer l;
          l.p.mean = detail::make_dense(cur[0], spec.units, layer_rng);
          const double rho0 = softplus_inverse(cfg.rho_init_frac * cfg.prior_std);
          l.p.rho.W = Tensor::full({spec.units, cur[0]}, rho0);
          l.p.rho.b = Tensor::full({spec.units}, rho0);
          l.p.prior_std = cfg.prior_std;
          m.layers.push_back(std::move(l));
        }
        break;
      }
      case LayerSpec::Kind::Conv2d: {
        if (plain) {
          m.layers.push_back(Conv2dLayer{detail::make_conv(cur[0], spec, layer_rng)});
        } else if (cfg.method == Method::Vnn) {
          VariationalConvLayer l;
          l.p.mu = detail::make_conv(cur[0], spec, layer_rng);
          l.p.sigma.K = Tensor({spec.channels, cur[0], spec.ksize, spec.ksize});
          l.p.sigma.b = Tensor::full({spec.channels}, cfg.sigma_init);
          l.p.sigma.stride = spec.stride;
          l.p.sigma.padding = spec.padding;
          l.site_shape = out;
          m.layers.push_back(std::move(l));
        } else {  // bbb
          BbbConvLayer l;
          l.p.mean = detail::make_conv(cur[0], spec, layer_rng);
          const double rho0 = softplus_inverse(cfg.rho_init_frac * cfg.prior_std);
          l.p.rho.K = Tensor::full({spec.channels, cur[0], spec.ksize, spec.ksize}, rho0);
          l.p.rho.b = Tensor::full({spec.channels}, rho0);
          l.p.rho.stride = spec.stride;
          l.p.rho.padding = spec.padding;
          l.p.prior_std = cfg.prior_std;
          m.layers.push_back(std::move(l));
        }
        break;
      }
      case LayerSpec::Kind::Flatten:
        m.layers.push_back(FlattenLayer{});
        break;
      case LayerSpec::Kind::Activation: {
        m.layers.push_back(ActivationLayer{spec.act});
        if (cfg.method == Method::Mcd) m.layers.push_back(DropoutLayer{{cfg.dropout_rate}});
        break;
      }
    }
    cur = out;
  }

  if (cfg.method == Method::Hypermodel) {
    if (cfg.index_dim < 1) throw ConfigError("hypermodel: index_dim must be >= 1");
    const std::size_t dz = static_cast<std::size_t>(cfg.index_dim);
    std::vector<Tensor*> base = m.base_parameters();
    std::size_t total = 0;
    for (Tensor* t : base) total += t->size();
    m.hm.a = Tensor({total});
    m.hm.B = Tensor({total, dz});

    // Per-tensor spread for B columns: a fresh index draw perturbs each
    // parameter on the scale of its own initialization.
    std::vector<double> scale_per_tensor;
    {
      Shape c = arch.input_shape;
      for (const LayerSpec& spec : arch.layers) {
        if (spec.kind == LayerSpec::Kind::Dense) {
          scale_per_tensor.push_back(std::sqrt(2.0 / static_cast<double>(c[0])));
          scale_per_tensor.push_back(std::sqrt(0.1));
        } else if (spec.kind == LayerSpec::Kind::Conv2d) {
          scale_per_tensor.push_back(
              std::sqrt(2.0 / static_cast<double>(c[0] * spec.ksize * spec.ksize)));
          scale_per_tensor.push_back(std::sqrt(0.1));
        }
        c = spec_output_shape(spec, c);
      }
    }
    RngStream b_rng = init_rng.child(0x42);
    std::size_t off = 0, ti = 0;
    for (Tensor* t : base) {
      const double s =
          cfg.hm_init_scale * scale_per_tensor.at(ti++) / std::sqrt(static_cast<double>(dz));
      for (std::size_t i = 0; i < t->size(); ++i, ++off) {
        m.hm.a.data[off] = t->data[i];
        for (std::size_t j = 0; j < dz; ++j) m.hm.B.data[off * dz + j] = s * b_rng.normal();
      }
    }
  }

  m.ensure_grads();
  return m;
}

// ---- predictive distribution --------------------------------------------

// Monte Carlo predictive moments over index draws; ensembles are enumerated
// exhaustively (exact population moments over members).
inline PredictiveSummary predictive_moments(Model& model, const Tensor& x, int T,
                                            RngStream& rng) {
  if (T < 1) throw UsageError("predictive_moments: T must be >= 1");
  std::vector<Tensor> outputs;
  if (model.method.method == Method::Deterministic) {
    EpistemicIndex z;
    Tensor y = model.forward_indexed(x, z);
    PredictiveSummary s;
    s.mean = y;
    s.variance = Tensor(y.shape);
    s.sample_count = T;
    return s;
  }
  if (model.method.method == Method::Ensemble) {
    for (int k = 0; k < static_cast<int>(model.members.size()); ++k) {
      EpistemicIndex z;
      z.method = Method::Ensemble;
      z.member = k;
      outputs.push_back(model.forward_indexed(x, z));
    }
  } else {
    for (int i = 0; i < T; ++i) {
      EpistemicIndex z = model.draw_index(rng);
      outputs.push_back(model.forward_indexed(x, z));
    }
  }
  const std::size_t n = outputs.size();
  PredictiveSummary s;
  s.sample_count = static_cast<int>(n);
  s.mean = Tensor(outputs[0].shape);
  s.variance = Tensor(outputs[0].shape);
  for (const Tensor& y : outputs)
    for (std::size_t i = 0; i < y.size(); ++i) s.mean.data[i] += y.data[i];
  for (double& v : s.mean.data) v /= static_cast<double>(n);
  for (const Tensor& y : outputs)
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = s.mean.data[i] - y.data[i];
      s.variance.data[i] += d * d;
    }
  for (double& v : s.variance.data) v /= static_cast<double>(n);
  return s;
}

// Mean over indexed passes of softmax(logits); rows sum to one.
inline Tensor predictive_class_probabilities(Model& model, const Tensor& x, int T,
                                             RngStream& rng) {
  if (T < 1) throw UsageError("predictive_class_probabilities: T must be >= 1");
  Tensor acc;
  std::size_t n = 0;
  auto accumulate = [&](const Tensor& logits) {
    Tensor p = ops::softmax_rows(logits);
    if (n == 0) {
      acc = Tensor(p.shape);
    }
    for (std::size_t i = 0; i < p.size(); ++i) acc.data[i] += p.data[i];
    ++n;
  };
  if (model.method.method == Method::Deterministic) {
    EpistemicIndex z;
    accumulate(model.forward_indexed(x, z));
  } else if (model.method.method == Method::Ensemble) {
    for (int k = 0; k < static_cast<int>(model.members.size()); ++k) {
      EpistemicIndex z;
      z.method = Method::Ensemble;
      z.member = k;
      accumulate(model.forward_indexed(x, z));
    }
  } else {
    for (int i = 0; i < T; ++i) {
      EpistemicIndex z = model.draw_index(rng);
      accumulate(model.forward_indexed(x, z));
    }
  }
  for (double& v : acc.data) v /= static_cast<double>(n);
  return acc;
}

inline Tensor forward_indexed(Model& model, const Tensor& x, const EpistemicIndex& z) {
  return model.forward_indexed(x, z);
}

}  // namespace vnn
