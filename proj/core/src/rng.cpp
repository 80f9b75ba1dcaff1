#include "caviar/rng.hpp"

#include <cmath>
#include <numbers>

namespace caviar {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  // 53 random bits, shifted by half an ulp so 0 and 1 are never produced.
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

Philox::Philox(std::uint64_t seed, std::uint32_t stream)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream) {}

Philox::Block Philox::block(std::uint64_t counter, std::uint32_t lane_hi) const {
  Block ctr{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32), lane_hi, stream_};
  std::uint32_t k0 = key_[0];
  std::uint32_t k1 = key_[1];
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return ctr;
}

double Philox::uniform(std::uint64_t counter, unsigned slot) const {
  const auto b = block(counter);
  return slot == 0 ? to_open_unit(b[0], b[1]) : to_open_unit(b[2], b[3]);
}

double Philox::normal(std::uint64_t counter) const {
  const auto b = block(counter);
  const double u1 = to_open_unit(b[0], b[1]);
  const double u2 = to_open_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace caviar
