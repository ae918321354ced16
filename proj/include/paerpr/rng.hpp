#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>

namespace paerpr {

// 64-bit mixing used everywhere we derive one seed from another. Keeping a
// single fixed mixer makes every derived stream reproducible across builds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG. The uniform/normal mappings are spelled out here (rather
// than using std:: distributions) so that generated scenes and datasets are
// byte-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t bits() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform integer in [0, n)
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::mt19937_64 engine_;
};

// Counter-based stream: value depends only on (key, counter), never on call
// order. Used for dropout masks keyed by (seed, layer name, step).
inline double counter_uniform(std::uint64_t key, std::uint64_t counter) {
  return static_cast<double>(splitmix64(key + 0x632be59bd9b4e019ULL * (counter + 1)) >> 11) * 0x1.0p-53;
}

}  // namespace paerpr
