#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include <caviar/domain.hpp>

using namespace caviar;

TEST(LevelRegistry, InternIsIdempotentAndOrdered) {
  LevelRegistry r;
  EXPECT_EQ(r.intern("02139"), 0u);
  EXPECT_EQ(r.intern("10001"), 1u);
  EXPECT_EQ(r.intern("02139"), 0u);
  EXPECT_EQ(r.size(), 2u);
  EXPECT_EQ(r.key(1), "10001");
  EXPECT_EQ(r.find("10001"), std::optional<LevelId>(1));
  EXPECT_FALSE(r.find("99999").has_value());
}

TEST(LevelRegistry, KeysAreOpaqueStrings) {
  LevelRegistry r;
  // No numeric normalization: these are three different levels.
  r.intern("0123");
  r.intern("123");
  r.intern("Lutheran");
  EXPECT_EQ(r.size(), 3u);
}

TEST(LevelRegistry, RejectsEmptyKey) {
  LevelRegistry r;
  EXPECT_THROW(r.intern(""), ValidationError);
}

TEST(LevelRegistry, RandomKeysRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pick(0, 400);
  LevelRegistry r;
  std::vector<std::string> keys;
  for (int i = 0; i < 2000; ++i) {
    keys.push_back("k" + std::to_string(pick(rng)));
  }
  const auto ids = register_levels(keys, r);
  ASSERT_EQ(ids.size(), keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    EXPECT_EQ(r.key(ids[i]), keys[i]);
    // First appearance order means every index is at most the number of keys seen so far.
    EXPECT_LE(ids[i], i);
  }
  std::vector<std::string> unique(r.keys().begin(), r.keys().end());
  std::sort(unique.begin(), unique.end());
  EXPECT_EQ(std::unique(unique.begin(), unique.end()), unique.end());
}

TEST(FrequencyTable, CountsLevelsByObservationCount) {
  const std::vector<LevelId> level{0, 1, 1, 2, 2, 2, 3};
  const auto ft = frequency_table(level);
  EXPECT_EQ(ft.at(1), 2u);
  EXPECT_EQ(ft.at(2), 1u);
  EXPECT_EQ(ft.at(3), 1u);
}

TEST(FrequencyTable, TotalsMatchRowsAndDistinctLevels) {
  std::mt19937_64 rng(9);
  std::geometric_distribution<LevelId> draw(0.05);
  std::vector<LevelId> level(5000);
  for (auto& l : level) {
    l = draw(rng);
  }
  const auto ft = frequency_table(level);
  std::size_t rows = 0, distinct = 0;
  for (const auto& [freq, count] : ft) {
    rows += freq * count;
    distinct += count;
  }
  EXPECT_EQ(rows, level.size());
  std::set<LevelId> seen(level.begin(), level.end());
  EXPECT_EQ(distinct, seen.size());
}

ObservationTable tiny_table() {
  ObservationTable t;
  t.levels.intern("a");
  t.levels.intern("b");
  t.y = Eigen::VectorXd::Ones(3);
  t.x = Eigen::MatrixXd::Zero(3, 1);
  t.covariate_names = {"x"};
  t.level = {0, 1, 1};
  return t;
}

TEST(ObservationTable, ValidateCatchesBrokenInvariants) {
  auto t = tiny_table();
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.level_counts(), (std::vector<std::size_t>{1, 2}));

  auto bad_level = t;
  bad_level.level[2] = 5;
  EXPECT_THROW(bad_level.validate(), ValidationError);

  auto bad_y = t;
  bad_y.y(0) = std::nan("");
  EXPECT_THROW(bad_y.validate(), ValidationError);

  auto bad_names = t;
  bad_names.covariate_names.clear();
  EXPECT_THROW(bad_names.validate(), ValidationError);

  auto bad_factor = t;
  bad_factor.factors.push_back(Factor{"month", {"1"}, {0, 0, 1}});
  EXPECT_THROW(bad_factor.validate(), ValidationError);
}

TEST(LevelStatus, StringRoundTrip) {
  for (auto s : {LevelStatus::estimated, LevelStatus::extrapolated, LevelStatus::pooled, LevelStatus::merged,
                 LevelStatus::absent}) {
    EXPECT_EQ(level_status_from_string(to_string(s)), s);
  }
  EXPECT_THROW(level_status_from_string("bogus"), ValidationError);
}

TEST(FeCovariance, MatchesDenseMatrix) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  FeCovariance c;
  c.diag = Eigen::VectorXd::NullaryExpr(6, [&] { return std::abs(normal(rng)); });
  c.loading = Eigen::MatrixXd::NullaryExpr(6, 2, [&] { return normal(rng); });
  const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(2, 2, [&] { return normal(rng); });
  c.core = a * a.transpose();
  const Eigen::MatrixXd dense =
      Eigen::MatrixXd(c.diag.asDiagonal()) + c.loading * c.core * c.loading.transpose();
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) {
      EXPECT_NEAR(c.covariance(i, j), dense(i, j), 1e-12);
    }
  }
}

TEST(LevelAttributeTable, ColumnLookup) {
  LevelAttributeTable a;
  a.column_names = {"latitude", "population"};
  a.values.resize(2, 2);
  a.values << 40.0, 100.0, 41.0, 200.0;
  EXPECT_TRUE(a.has_column("population"));
  EXPECT_EQ(a.column("latitude")(1), 41.0);
  EXPECT_THROW(a.column("elevation"), ValidationError);
  EXPECT_NO_THROW(a.validate(2));
  EXPECT_THROW(a.validate(3), ValidationError);
  a.values(0, 1) = -1.0;
  EXPECT_THROW(a.validate(2), ValidationError);
}
