#pragma once

#include <cstdint>
#include <random>

namespace bilevel {

// Seeded generator with platform-independent output.
//
// Algorithm "mt64-bm-v1": std::mt19937_64 (fully specified by the standard)
// for raw bits; uniforms use the top 53 bits; normals use the Box-Muller
// cosine branch (one normal per two uniforms, no caching). The standard
// library's distributions are not used because their outputs are
// implementation-defined.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt64-bm-v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double rademacher() { return (bits() >> 63) ? 1.0 : -1.0; }

  // Independent child stream, e.g. one per training sample.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace bilevel
