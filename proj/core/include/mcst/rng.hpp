#pragma once

#include <cmath>
#include <cstdint>

namespace mcst {

// splitmix64 finalizer; the bit mix behind every random stream in the
// library so results do not depend on the platform's std:: distributions.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) {
  return mix64(mix64(a, b), c);
}

// Sequential generator. All sub-streams are derived from one root seed via
// derive(), so a single `seed` config key pins every random choice.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix64(seed)) {}

  static Rng derive(uint64_t seed, uint64_t stream_id) {
    return Rng(mix64(seed, stream_id));
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, second half discarded.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

 private:
  uint64_t state_;
};

// Stateless counter-based stream: value depends only on the key tuple,
// never on call order. Used by dropout so masks are reproducible from
// (seed, layer, step, element).
inline double counter_uniform(uint64_t seed, uint64_t layer, uint64_t step,
                              uint64_t index) {
  uint64_t h = mix64(mix64(seed, layer), mix64(step, index));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Stream ids for Rng::derive; fixed so runs are reproducible across builds.
namespace streams {
constexpr uint64_t kParamInit = 0x01;
constexpr uint64_t kShuffle = 0x02;
constexpr uint64_t kSynthetic = 0x03;
constexpr uint64_t kDropout = 0x04;
constexpr uint64_t kSpatialOrder = 0x05;
}  // namespace streams

}  // namespace mcst
