#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace binorm {

/// Derives an independent stream seed from a root seed and a purpose tag.
///
/// The derivation is splitmix64(root ^ fnv1a64(tag)), so every consumer of
/// randomness (initialization, data generation, batch order, ...) gets its own
/// stream while the whole program is still driven by one root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

/// Seeded generator with distribution code that does not depend on the
/// standard library implementation, so streams are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view tag) : engine_(derive_seed(root, tag)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace binorm
