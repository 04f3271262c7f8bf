#pragma once

// Counter-based random streams.
//
// Every consumer of randomness derives its own stream from a root seed and a
// tuple of integer tags (draw index, diffusion step, epoch, ...). Output i of a
// stream is a pure function of (key, i), so draws can be generated in any order
// or on any thread with identical results.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <vector>

#include <Eigen/Core>

namespace factordiff {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_key(std::uint64_t key, std::uint64_t tag) noexcept {
  return splitmix64(key ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

/// Purpose tags so unrelated consumers of one seed never share a stream.
enum class StreamTag : std::uint64_t {
  synthetic_characteristics = 1,
  synthetic_shocks = 2,
  factor_permutation = 3,
  parameter_init = 4,
  training_shuffle = 5,
  training_step = 6,
  training_noise = 7,
  sampling = 8,
  backtest_month = 9,
  derived_seed = 10,
};

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) noexcept : key_(splitmix64(seed)) {}

  RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept
      : key_(splitmix64(seed)) {
    for (auto t : tags) key_ = mix_key(key_, t);
  }

  RandomStream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> tags = {}) noexcept
      : RandomStream(seed, {static_cast<std::uint64_t>(tag)}) {
    for (auto t : tags) key_ = mix_key(key_, t);
  }

  std::uint64_t next_u64() noexcept { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const auto j = static_cast<int>(below(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Child seed for an independent sub-computation (e.g. one ablation job).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t k = mix_key(splitmix64(seed), static_cast<std::uint64_t>(StreamTag::derived_seed));
  for (auto t : tags) k = mix_key(k, t);
  return k;
}

}  // namespace factordiff
