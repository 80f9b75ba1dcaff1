#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <caviar/diagnostics.hpp>
#include <caviar/estimators.hpp>

#include "fixtures.hpp"

using namespace caviar;
using caviar::testing::random_table;

namespace {

/// A table generated from known level effects, returned with those effects.
struct Truthful {
  ObservationTable data;
  Eigen::VectorXd truth;
};

Truthful truthful(std::uint64_t seed, std::size_t n, std::size_t levels, double noise = 1.0) {
  std::mt19937_64 rng(seed);
  Truthful t{random_table(rng, n, levels, 1), Eigen::VectorXd(static_cast<Eigen::Index>(levels))};
  std::normal_distribution<double> normal;
  for (auto& b : t.truth) b = normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    t.data.y(r) = t.truth(t.data.level[i]) + 0.8 * t.data.x(r, 0) + noise * normal(rng);
  }
  return t;
}

}  // namespace

TEST(Ecdf, StepFunction) {
  const Ecdf f({3.0, 1.0, 2.0, 2.0});
  EXPECT_EQ(f.size(), 4u);
  EXPECT_EQ(f(0.5), 0.0);
  EXPECT_EQ(f(1.0), 0.25);
  EXPECT_EQ(f(1.5), 0.25);
  EXPECT_EQ(f(2.0), 0.75);
  EXPECT_EQ(f(3.0), 1.0);
  EXPECT_EQ(f(99.0), 1.0);
  EXPECT_EQ(f.support(), (std::vector<double>{1.0, 2.0, 3.0}));
  EXPECT_THROW(Ecdf({}), ValidationError);
  EXPECT_THROW(Ecdf({1.0, std::nan("")}), ValidationError);
}

TEST(Ecdf, MonotoneOnRandomInput) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> v(500);
  for (auto& x : v) x = normal(rng);
  const auto f = ecdf(v);
  double last = 0.0;
  for (double x = -4.0; x <= 4.0; x += 0.01) {
    EXPECT_GE(f(x), last);
    last = f(x);
  }
  EXPECT_EQ(f.cumulative().back(), 1.0);
}

TEST(Histogram, CountsEveryValue) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::vector<double> v(1000);
  for (auto& x : v) x = normal(rng);
  HistogramOptions opt;
  opt.bins = 20;
  opt.width_sds = 2.0;
  const auto h = make_histogram(v, opt);
  ASSERT_EQ(h.edges.size(), 21u);
  std::size_t total = h.underflow + h.overflow;
  for (auto c : h.counts) total += c;
  EXPECT_EQ(total, v.size());
  EXPECT_GT(h.underflow + h.overflow, 0u);
}

TEST(Histogram, FixedRangeAndEdges) {
  HistogramOptions opt;
  opt.bins = 4;
  opt.range = std::make_pair(0.0, 4.0);
  const auto h = make_histogram({-1.0, 0.0, 0.5, 1.0, 3.999, 4.0, 5.0}, opt);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 1, 0, 2}));
  EXPECT_EQ(h.underflow, 1u);
  EXPECT_EQ(h.overflow, 1u);
  opt.range = std::make_pair(1.0, 1.0);
  EXPECT_THROW(make_histogram({1.0}, opt), ValidationError);
  opt.bins = 0;
  EXPECT_THROW(make_histogram({1.0}, opt), ValidationError);
}

TEST(ErrorReport, WeightsAndExclusions) {
  FitResult fit;
  fit.fe = Eigen::Vector4d(1.0, 2.0, 0.0, std::nan(""));
  fit.fe_status = {LevelStatus::estimated, LevelStatus::pooled, LevelStatus::merged, LevelStatus::absent};
  fit.level_counts = {1, 3, 5, 0};
  const Eigen::Vector4d truth(0.5, 1.0, 10.0, 0.0);
  const auto rep = error_report(fit, truth);
  EXPECT_EQ(rep.included, (std::vector<LevelId>{0, 1}));
  EXPECT_EQ(rep.observations, 4u);
  EXPECT_DOUBLE_EQ(rep.error(0), 0.5);
  EXPECT_DOUBLE_EQ(rep.error(1), 1.0);
  EXPECT_TRUE(std::isnan(rep.error(2)));
  EXPECT_DOUBLE_EQ(rep.level_mean, 0.75);
  EXPECT_DOUBLE_EQ(rep.obs_mean, 0.25 * 0.5 + 0.75 * 1.0);
  EXPECT_DOUBLE_EQ(rep.obs_mse, 0.25 * 0.25 + 0.75 * 1.0);
  EXPECT_NEAR(rep.obs_variance, rep.obs_mse - rep.obs_mean * rep.obs_mean, 1e-15);
  EXPECT_DOUBLE_EQ(rep.rmse, std::sqrt((0.25 + 1.0) / 2.0));
  EXPECT_EQ(rep.sem_method, "empirical");
  EXPECT_THROW(error_report(fit, Eigen::Vector3d::Zero()), ValidationError);
}

TEST(ErrorReport, ModelSemMatchesDenseCovariance) {
  const auto t = truthful(3, 400, 20);
  const auto fit = fit_ols_absorbed(t.data);
  const auto rep = error_report(fit, t.truth);
  EXPECT_EQ(rep.sem_method, "model");
  Eigen::VectorXd w(20);
  for (Eigen::Index z = 0; z < 20; ++z) w(z) = static_cast<double>(fit.level_counts[static_cast<std::size_t>(z)]) / 400.0;
  double v = 0.0;
  for (Eigen::Index a = 0; a < 20; ++a) {
    for (Eigen::Index b = 0; b < 20; ++b) v += w(a) * w(b) * fit.fe_cov->covariance(a, b);
  }
  EXPECT_NEAR(rep.obs_mean_sem, std::sqrt(v), 1e-12);
}

TEST(PrecisionTest, RecomputedByHand) {
  const auto t = truthful(4, 300, 15);
  const auto fit = fit_ols_absorbed(t.data);
  const auto pt = precision_consistency(fit, t.truth);
  const Eigen::Index l = 15;
  Eigen::MatrixXd sigma(l, l);
  for (Eigen::Index a = 0; a < l; ++a) {
    for (Eigen::Index b = 0; b < l; ++b) sigma(a, b) = fit.fe_cov->covariance(a, b);
  }
  Eigen::VectorXd w(l);
  for (Eigen::Index z = 0; z < l; ++z) w(z) = static_cast<double>(fit.level_counts[static_cast<std::size_t>(z)]) / 300.0;
  double obs = 0.0, se2 = 0.0;
  for (Eigen::Index z = 0; z < l; ++z) {
    obs += w(z) * (fit.fe(z) - t.truth(z)) * (fit.fe(z) - t.truth(z));
    se2 += w(z) * fit.fe_se(z) * fit.fe_se(z);
  }
  const Eigen::MatrixXd ws = w.asDiagonal() * sigma;
  const double sem = std::sqrt(2.0 * (ws * ws).trace());
  EXPECT_NEAR(pt.observed_var, obs, 1e-12);
  EXPECT_NEAR(pt.mean_se2, se2, 1e-12);
  EXPECT_NEAR(pt.sem, sem, 1e-12);
  EXPECT_NEAR(pt.t, (se2 - obs) / sem, 1e-9);
  EXPECT_EQ(pt.levels, 15u);
  EXPECT_EQ(pt.observations, 300u);
}

TEST(PrecisionTest, CalibratedUnderTheModel) {
  double sum_t = 0.0;
  constexpr int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const auto t = truthful(1000 + static_cast<std::uint64_t>(r), 200, 40);
    sum_t += precision_consistency(fit_ols_absorbed(t.data), t.truth).t;
  }
  EXPECT_LT(std::abs(sum_t / reps), 0.3);
}

TEST(PrecisionTest, RejectsFitsWithoutCovariance) {
  const auto t = truthful(5, 200, 10);
  auto fit = fit_ols_absorbed(t.data);
  fit.fe_cov.reset();
  EXPECT_THROW(precision_consistency(fit, t.truth), ValidationError);
}

TEST(Significance, CountsTwoSidedNormalTest) {
  FitResult fit;
  fit.fe = Eigen::Vector4d(3.0, -3.0, 0.5, 5.0);
  fit.fe_se = Eigen::Vector4d(1.0, 1.0, 1.0, std::nan(""));
  fit.fe_status = {LevelStatus::estimated, LevelStatus::estimated, LevelStatus::estimated, LevelStatus::pooled};
  fit.level_counts = {1, 1, 1, 1};
  const auto res = significance_count(fit);
  EXPECT_NEAR(res.critical_value, 1.959964, 1e-6);
  EXPECT_EQ(res.total, 3u);
  EXPECT_EQ(res.significant, 2u);
  EXPECT_EQ(res.flags, (std::vector<bool>{true, true, false, false}));
  EXPECT_EQ(significance_count(fit, 3.0).significant, 2u);
  EXPECT_THROW(significance_count(fit, 0.0, 1.5), ValidationError);
}

TEST(Significance, NullModelRejectsAboutFivePercent) {
  auto t = truthful(6, 20000, 1000);
  t.truth.setZero();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < t.data.rows(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    t.data.y(r) = 0.8 * t.data.x(r, 0) + normal(rng);
  }
  const auto res = significance_count(fit_ols_absorbed(t.data));
  EXPECT_NEAR(res.fraction(), 0.05, 0.025);
}

TEST(Overfit, SingletonsGiveZeroResiduals) {
  std::mt19937_64 rng(7);
  auto t = random_table(rng, 100, 20, 0);
  // Add five singleton levels.
  for (int s = 0; s < 5; ++s) {
    const auto id = t.levels.intern("single" + std::to_string(s));
    t.level.push_back(id);
    t.y.conservativeResize(t.y.size() + 1);
    t.y(t.y.size() - 1) = static_cast<double>(s);
  }
  t.x.resize(static_cast<Eigen::Index>(t.level.size()), 0);
  const auto fit = fit_ols_absorbed(t);
  const auto rep = overfit_report(fit, t);
  EXPECT_EQ(rep.singleton_levels, 5u);
  EXPECT_GE(rep.zero_residuals, 5u);
  EXPECT_EQ(rep.parameters, 25u);
  EXPECT_TRUE(rep.saturated);
  EXPECT_DOUBLE_EQ(rep.parameter_ratio, 25.0 / 105.0);
}
