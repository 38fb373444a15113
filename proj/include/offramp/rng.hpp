#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace offramp {

// Deterministic RNG used everywhere randomness is needed. std::mt19937_64 is
// fully specified by the standard; the distribution helpers are hand-rolled
// because std::normal_distribution and friends are implementation-defined and
// would break bit-exact reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform double in [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n). Modulo bias is irrelevant at our range sizes.
  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform_index(static_cast<std::size_t>(hi - lo + 1)));
  }

  // Box-Muller with a cached spare draw.
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = uniform_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with a component tag so that independent consumers
// (data generation, parameter init, per-epoch shuffles) draw from
// decorrelated streams while remaining a pure function of the run seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace offramp
