#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include <caviar/simgen.hpp>

using namespace caviar;

namespace {

const GeographyModel& default_geography() {
  static const GeographyModel geo = generate_geography(kDefaultSimLevels, 7);
  return geo;
}

double sample_sd(const Eigen::VectorXd& v) {
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean(), db = b.array() - b.mean();
  return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

}  // namespace

TEST(StandardizeFeature, AlreadyUnitScale) {
  Eigen::VectorXd v(3);
  v << 0, 1, 2;
  const auto s = standardize_feature(v);
  EXPECT_NEAR(s(0), 0.0, 1e-15);
  EXPECT_NEAR(s(1), 1.0, 1e-15);
  EXPECT_NEAR(s(2), 2.0, 1e-15);
}

TEST(StandardizeFeature, ConstantColumnThrows) {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(3, 5.0);
  EXPECT_THROW(standardize_feature(v), ValidationError);
}

TEST(StandardizeFeature, MinZeroAndUnitSdBothDirections) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(40.0, 5.0);
  Eigen::VectorXd v(500);
  for (auto& x : v) x = normal(rng);
  for (auto dir : {Direction::ascending, Direction::descending}) {
    const auto s = standardize_feature(v, dir);
    EXPECT_NEAR(s.minCoeff(), 0.0, 1e-12);
    EXPECT_NEAR(sample_sd(s), 1.0, 1e-12);
  }
  // Descending puts the largest value at zero.
  Eigen::Index arg;
  v.maxCoeff(&arg);
  EXPECT_NEAR(standardize_feature(v, Direction::descending)(arg), 0.0, 1e-12);
}

TEST(Geography, AttributeRangesMatchBounds) {
  const auto& geo = default_geography();
  const GeographyParams p;
  const auto lat = geo.attributes.column("latitude"), lon = geo.attributes.column("longitude"),
             ele = geo.attributes.column("elevation");
  EXPECT_DOUBLE_EQ(lat.minCoeff(), p.lat_min);
  EXPECT_DOUBLE_EQ(lat.maxCoeff(), p.lat_max);
  EXPECT_GE(lon.minCoeff(), -124.5);
  EXPECT_LE(lon.maxCoeff(), -71.9);
  EXPECT_DOUBLE_EQ(ele.minCoeff(), -858.0);
  EXPECT_DOUBLE_EQ(ele.maxCoeff(), 3870.0);
  EXPECT_NEAR(geo.weights.sum(), 1.0, 1e-12);
  EXPECT_GT(geo.weights.minCoeff(), 0.0);
}

TEST(Geography, TwoLevels) {
  const auto geo = generate_geography(2, 1);
  EXPECT_EQ(geo.size(), 2u);
  EXPECT_NE(geo.levels.key(0), geo.levels.key(1));
  EXPECT_NEAR(geo.weights.sum(), 1.0, 1e-15);
}

TEST(Geography, DeterministicPerSeed) {
  const auto a = generate_geography(300, 5), b = generate_geography(300, 5), c = generate_geography(300, 6);
  EXPECT_EQ(a.levels.keys(), b.levels.keys());
  EXPECT_TRUE(a.attributes.values == b.attributes.values);
  EXPECT_FALSE(a.attributes.values == c.attributes.values);
}

TEST(Geography, SingletonCountNearReference) {
  const auto sim = simulate(default_geography(), sim1_config(100000, 7));
  const auto ft = frequency_table(sim.data.level);
  const double singletons = static_cast<double>(ft.at(1));
  EXPECT_NEAR(singletons, 5031.0, 0.15 * 5031.0);
}

TEST(TrueFixedEffects, SimOneShape) {
  const auto& geo = default_geography();
  const auto beta = true_fixed_effects(geo, sim1_config().delta);
  EXPECT_NEAR(beta.minCoeff(), 0.0, 1e-12);
  EXPECT_NEAR(beta.maxCoeff(), 4.895, 0.1 * 4.895);
  EXPECT_NEAR(beta.mean(), 2.305, 0.1 * 2.305);
  EXPECT_NEAR(sample_sd(beta), 1.0, 1e-12);
}

TEST(TrueFixedEffects, SimTwoShape) {
  const auto beta = true_fixed_effects(default_geography(), sim2_config().delta);
  EXPECT_NEAR(beta.mean(), 12.054, 0.1 * 12.054);
  EXPECT_NEAR(sample_sd(beta), 1.518, 0.1 * 1.518);
}

TEST(TrueFixedEffects, ZeroDeltaAndUnknownFeature) {
  const auto& geo = default_geography();
  EXPECT_EQ(true_fixed_effects(geo, {{"latitude", 0.0}}).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(true_fixed_effects(geo, {{"religion", -1.0}}), ValidationError);
}

TEST(Simulate, NoiselessOutcomeEqualsFixedEffect) {
  auto cfg = sim1_config(2000, 3);
  cfg.noise_sd = 0.0;
  cfg.beta_price = 0.0;
  cfg.alpha = 0.0;
  const auto sim = simulate(default_geography(), cfg);
  for (std::size_t i = 0; i < sim.data.rows(); ++i) {
    EXPECT_EQ(sim.data.y(static_cast<Eigen::Index>(i)), sim.truth(sim.data.level[i]));
  }
}

TEST(Simulate, DeterministicAcrossThreadCounts) {
  const auto cfg = sim1_config(50000, 9);
  const auto a = simulate(default_geography(), cfg, 1), b = simulate(default_geography(), cfg, 4);
  EXPECT_TRUE(a.data.y == b.data.y);
  EXPECT_TRUE(a.data.x == b.data.x);
  EXPECT_EQ(a.data.level, b.data.level);
}

TEST(Simulate, PriceIsEndogenous) {
  const auto sim = simulate(default_geography(), sim1_config(100000, 7));
  Eigen::VectorXd beta_i(static_cast<Eigen::Index>(sim.data.rows()));
  for (std::size_t i = 0; i < sim.data.rows(); ++i) {
    beta_i(static_cast<Eigen::Index>(i)) = sim.truth(sim.data.level[i]);
  }
  EXPECT_GT(correlation(sim.data.x.col(0), beta_i), 0.0);
}

TEST(Simulate, PriceMeanMatchesClosedForm) {
  const auto& geo = default_geography();
  const auto sim = simulate(geo, sim1_config(100000, 7));
  const auto lat = geo.attributes.column("latitude");
  const double expected = 5.0 + geo.weights.dot((sim.lat_max - lat.array()).matrix());
  const Eigen::VectorXd price = sim.data.x.col(0);
  const double se = sample_sd(price) / std::sqrt(static_cast<double>(price.size()));
  EXPECT_NEAR(price.mean(), expected, 3.0 * se);
}

TEST(Simulate, SimTwoIsSimOnePlusElevationShift) {
  const auto& geo = default_geography();
  const auto s1 = simulate(geo, sim1_config(20000, 7));
  const auto s2 = simulate(geo, sim2_config(20000, 7));
  const auto delta = true_fixed_effects(geo, {{"elevation", -1.0}});
  for (std::size_t i = 0; i < s1.data.rows(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(s2.data.y(r), s1.data.y(r) + delta(s1.data.level[i]), 1e-12);
  }
}

TEST(Simulate, FrequenciesFitWeights) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(1.0, 50.0);
  LevelRegistry levels;
  LevelAttributeTable attrs;
  attrs.column_names = {"latitude", "population"};
  attrs.values.resize(100, 2);
  for (int z = 0; z < 100; ++z) {
    levels.intern("z" + std::to_string(z));
    attrs.values(z, 0) = 30.0 + 0.1 * z;
    attrs.values(z, 1) = u(rng);
  }
  const auto geo = geography_from_attributes(levels, attrs);
  SimConfig cfg;
  cfg.n = 1000000;
  cfg.delta = {{"latitude", -1.0}};
  const auto sim = simulate(geo, cfg);
  const auto counts = sim.data.level_counts();
  double chi2 = 0.0;
  for (int z = 0; z < 100; ++z) {
    const double e = geo.weights(z) * static_cast<double>(cfg.n);
    chi2 += (static_cast<double>(counts[static_cast<std::size_t>(z)]) - e) * (static_cast<double>(counts[static_cast<std::size_t>(z)]) - e) / e;
  }
  // 99.9% quantile of chi-square with 99 degrees of freedom.
  EXPECT_LT(chi2, 148.23);
}

TEST(Simulate, RejectsBadConfig) {
  auto cfg = sim1_config(10, 1);
  cfg.noise_sd = -1.0;
  EXPECT_THROW(simulate(default_geography(), cfg), ValidationError);
  cfg = sim1_config(10, 1);
  cfg.price_low = 10.0;
  EXPECT_THROW(simulate(default_geography(), cfg), ValidationError);
  cfg = sim1_config(0, 1);
  EXPECT_THROW(simulate(default_geography(), cfg), ValidationError);
}

TEST(SimulateField, FactorsAndCoupon) {
  const auto geo = generate_geography(2000, 11);
  FieldConfig cfg;
  cfg.n = 20000;
  const auto sim = simulate_field(geo, cfg);
  ASSERT_EQ(sim.data.factors.size(), 2u);
  EXPECT_EQ(sim.data.factors[0].labels.size(), 12u);
  EXPECT_EQ(sim.data.factors[1].labels.size(), cfg.num_years);
  const double rate = sim.data.x.col(0).mean();
  EXPECT_NEAR(rate, cfg.coupon_rate, 4.0 * std::sqrt(cfg.coupon_rate * (1 - cfg.coupon_rate) / cfg.n));
  EXPECT_NO_THROW(sim.data.validate());
}
