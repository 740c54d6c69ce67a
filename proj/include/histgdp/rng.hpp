#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace histgdp {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for one stochastic consumer, derived by hashing the master seed with
/// a purpose label and an index. Independent of scheduling and thread count.
std::uint64_t child_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0);

/// Deterministic generator with platform-independent helpers (the standard
/// distributions are implementation-defined across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Uniform in [0, 1).
  double uniform();
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace histgdp
