#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace vdqn {

/// Counter-based 64-bit generator.
///
/// Output i of a stream with key k is mix(k + (i + 1) * G), where G is the
/// 64-bit golden-ratio increment and mix is the SplitMix64 finalizer. The
/// generator state is therefore just (key, counter), and any position can be
/// reached in O(1) with `seek`.
///
/// Stream splitting: `split(id)` derives an independent child key as
/// mix(key ^ mix(id + G)). Children of the same parent with distinct ids are
/// distinct streams; splitting never advances the parent.
///
/// All derived variates (uniform doubles, bounded integers, normals) are
/// computed here rather than through <random> distributions, whose output is
/// implementation-defined, so trajectories agree across standard libraries.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  explicit CounterRng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  result_type operator()() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  CounterRng split(std::uint64_t stream_id) const {
    CounterRng child;
    child.key_ = mix(key_ ^ mix(stream_id + kGolden));
    child.counter_ = 0;
    return child;
  }

  void seek(std::uint64_t counter) {
    counter_ = counter;
    has_spare_ = false;
  }
  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t bucket = max() / n;
    const std::uint64_t accept = bucket * n;
    for (;;) {
      const std::uint64_t x = (*this)();
      if (x < accept) return x / bucket;
    }
  }

  /// Standard normal via the Marsaglia polar method; spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  friend bool operator==(const CounterRng&, const CounterRng&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vdqn
