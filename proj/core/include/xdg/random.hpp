#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace xdg {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Seeded generator with platform-independent distributions.
///
/// The standard <random> distributions are implementation-defined, which would
/// make datasets and metric streams differ between standard libraries. Only the
/// engine is taken from the standard library; every distribution here is
/// computed from its raw 64-bit output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n); unbiased.
  std::size_t below(std::size_t n);
  /// Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Identity permutation of [0, n) shuffled.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xdg
