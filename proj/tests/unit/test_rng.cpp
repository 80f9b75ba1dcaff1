#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include <caviar/rng.hpp>

using caviar::Philox;
using caviar::Stream;

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswerZero) {
  const Philox p(0, 0u);
  const auto b = p.block(0, 0);
  EXPECT_EQ(b[0], 0x6627e8d5u);
  EXPECT_EQ(b[1], 0xe169c58du);
  EXPECT_EQ(b[2], 0xbc57ac4cu);
  EXPECT_EQ(b[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerAllOnes) {
  const Philox p(0xffffffffffffffffull, 0xffffffffu);
  const auto b = p.block(0xffffffffffffffffull, 0xffffffffu);
  EXPECT_EQ(b[0], 0x408f276du);
  EXPECT_EQ(b[1], 0x41c83b0eu);
  EXPECT_EQ(b[2], 0xa20bc7c6u);
  EXPECT_EQ(b[3], 0x6d5451fdu);
}

TEST(Philox, PureFunctionOfCounter) {
  const Philox a(42, Stream::noise), b(42, Stream::noise);
  for (std::uint64_t c : {0ull, 1ull, 99ull, 1ull << 40}) {
    EXPECT_EQ(a.block(c), b.block(c));
    EXPECT_EQ(a.uniform(c), b.uniform(c));
  }
}

TEST(Philox, StreamsAndLanesDiffer) {
  const Philox noise(42, Stream::noise), price(42, Stream::price);
  EXPECT_NE(noise.block(5), price.block(5));
  EXPECT_NE(noise.block(5, 0), noise.block(5, 1));
}

TEST(Philox, UniformStaysInOpenInterval) {
  const Philox p(3, Stream::price);
  double sum = 0.0;
  constexpr int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = p.uniform(static_cast<std::uint64_t>(i), i % 2);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Philox, NormalMoments) {
  const Philox p(11, Stream::noise);
  constexpr int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = p.normal(static_cast<std::uint64_t>(i));
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Philox, NoRepeatsInShortRun) {
  const Philox p(1, Stream::level_draw);
  std::set<double> seen;
  for (int i = 0; i < 10000; ++i) {
    seen.insert(p.uniform(static_cast<std::uint64_t>(i)));
  }
  EXPECT_EQ(seen.size(), 10000u);
}
