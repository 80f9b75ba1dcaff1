#pragma once

#include <array>
#include <cstdint>

namespace caviar {

/// Independent purposes that draw randomness. Adding a stream never perturbs another.
enum class Stream : std::uint32_t {
  population = 1,
  population_regime = 6,
  latitude = 2,
  longitude = 3,
  elevation = 4,
  elevation_copula = 5,
  level_draw = 10,
  price = 11,
  noise = 12,
  covariate = 13,
  factor = 14,
  fold_assignment = 20,
  mock_encoder = 30,
};

/**
 * Counter-based generator (Philox4x32-10). Every draw is a pure function of
 * (seed, stream, counter), so row i's draws do not depend on how rows are
 * scheduled across workers.
 */
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  Philox(std::uint64_t seed, Stream stream) : Philox(seed, static_cast<std::uint32_t>(stream)) {}
  Philox(std::uint64_t seed, std::uint32_t stream);

  Block block(std::uint64_t counter, std::uint32_t lane_hi = 0) const;

  /// Uniform on the open interval (0, 1) with 53 bits; `slot` selects one of two doubles per block.
  double uniform(std::uint64_t counter, unsigned slot = 0) const;

  /// Standard normal via Box-Muller on the two doubles of block `counter`.
  double normal(std::uint64_t counter) const;

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
};

}  // namespace caviar
