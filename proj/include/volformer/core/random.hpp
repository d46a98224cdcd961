#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace volformer {

/// Mixes a base seed with stream tags so independent consumers (layers,
/// subjects, epochs) draw from unrelated streams.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  template <typename T>
  void fill_uniform(std::span<T> out, double lo, double hi) {
    for (T& v : out) v = static_cast<T>(uniform(lo, hi));
  }
  template <typename T>
  void fill_normal(std::span<T> out, double mean, double stddev) {
    for (T& v : out) v = static_cast<T>(normal(mean, stddev));
  }

  /// Fisher-Yates with our own index draws so the permutation does not
  /// depend on the standard library's shuffle implementation.
  template <typename C>
  void shuffle(C& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace volformer
