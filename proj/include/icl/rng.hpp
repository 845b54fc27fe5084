#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace icl {

// SplitMix64 finalizer. Used both to seed engines and as a counter-based
// generator for lazily materialized wavelet coefficients.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for stream `counter` of `root`. Distinct counters give
// statistically independent streams.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t counter) noexcept {
  return splitmix64(splitmix64(root) ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t hash_words(std::uint64_t seed, std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t w : words) h = splitmix64(h ^ (w + 0x9e3779b97f4a7c15ULL));
  return h;
}

// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return to_unit_interval(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t counter) const { return Rng(derive_seed(engine_seed_hint(), counter)); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t engine_seed_hint() const {
    std::mt19937_64 copy = engine_;
    return copy();
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace icl
