#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace pairrank {

/// Seeded 64-bit generator whose derived uniforms and normals are identical on
/// every standard library (the std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  /// Independent substream keyed by (seed, stream).
  Rng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stable 64-bit FNV-1a hash, used to key substreams by string ids.
std::uint64_t stable_hash(std::string_view text);

}  // namespace pairrank
