#pragma once

#include <cstdint>
#include <random>

#include "vnn/tensor.hpp"

namespace vnn {

namespace detail {

// SplitMix64 finalizer; used to derive child stream seeds from (seed, label).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic random stream addressed by (master_seed, path of labels).
// Child derivation is counter-based: the same label sequence always yields a
// bit-identical stream, and distinct paths yield statistically independent
// streams regardless of the order streams are consumed in.
//
// The raw u64 sequence comes from std::mt19937_64 (sequence pinned by the
// standard); the normal transform is an explicit Box-Muller so samples do not
// depend on the standard library's unspecified distribution algorithms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t master_seed)
      : seed_(detail::splitmix64(master_seed ^ 0x5851f42d4c957f2dULL)), engine_(seed_) {}

  // New independent stream for path extension (seed, ..., label).
  RngStream child(std::uint64_t label) const {
    return RngStream(FromDerived{}, detail::splitmix64(seed_ ^ detail::splitmix64(label)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t integer(std::uint64_t n) {
    // Rejection sampling over the largest multiple of n keeps this unbiased.
    const std::uint64_t limit = n * ((~0ULL) / n);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Tensor standard_normal(Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = normal();
    return t;
  }

  void fill_uniform(Tensor& t, double lo, double hi) {
    for (double& v : t.data) v = uniform_in(lo, hi);
  }

 private:
  struct FromDerived {};
  RngStream(FromDerived, std::uint64_t derived) : seed_(derived), engine_(derived) {}

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// i.i.d. standard-normal entries, deterministic per stream.
inline Tensor sample_standard_normal(Shape shape, RngStream& rng) {
  return rng.standard_normal(std::move(shape));
}

}  // namespace vnn
