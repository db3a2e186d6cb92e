#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <numbers>

namespace adadiff {

/// Small portable PRNG for geometry and sampling patterns. Unlike the
/// <random> distributions its output is identical across standard libraries,
/// which keeps generated datasets byte-stable.
class SplitMix64 {
public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  /// (0, 1)
  double uniformOpen() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [lo, hi].
  int64_t uniformInt(int64_t lo, int64_t hi) {
    const auto span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next() % span);
  }
  double normal() {
    const double u1 = uniformOpen();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  uint64_t state_;
};

/// Mixes a base seed with a stream tag into an independent seed.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
  SplitMix64 mix(base ^ (tag * 0xD1B54A32D192ED03ULL));
  mix.next();
  return mix.next();
}

/// Seeded torch CPU generator.
inline torch::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

} // namespace adadiff
