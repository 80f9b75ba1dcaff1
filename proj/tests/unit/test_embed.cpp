#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <caviar/embed.hpp>
#include <caviar/simgen.hpp>

using namespace caviar;

namespace {

Eigen::MatrixXd random_features(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, Eigen::Index rank = -1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  if (rank < 0) rank = cols;
  const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(rows, rank, [&] { return normal(rng); });
  const Eigen::MatrixXd b = Eigen::MatrixXd::NullaryExpr(rank, cols, [&] { return normal(rng); });
  Eigen::VectorXd scale(cols);
  for (Eigen::Index c = 0; c < cols; ++c) scale(c) = 1.0 + static_cast<double>(c);
  return (a * b) * scale.asDiagonal() + Eigen::MatrixXd::Constant(rows, cols, 3.0);
}

double reconstruction_error(const Eigen::MatrixXd& f, const EmbeddingMatrix& e) {
  const Eigen::MatrixXd back = (e.coords * e.basis.transpose()).rowwise() + e.center.transpose();
  return (f - back).norm();
}

Eigen::Index nearest(const Eigen::MatrixXd& m, Eigen::Index row) {
  Eigen::Index best = -1;
  double best_d = INFINITY;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r == row) continue;
    const double d = (m.row(r) - m.row(row)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

}  // namespace

TEST(Pca, BasisIsOrthonormal) {
  const auto f = random_features(1, 200, 12);
  for (std::size_t j : {1u, 4u, 12u}) {
    const auto e = pca_reduce(f, j);
    const Eigen::MatrixXd gram = e.basis.transpose() * e.basis;
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j))).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(e.reduction, "pca");
  }
}

TEST(Pca, ReconstructionNonincreasingInJ) {
  const auto f = random_features(2, 150, 10);
  double last = INFINITY;
  for (std::size_t j = 1; j <= 10; ++j) {
    const double err = reconstruction_error(f, pca_reduce(f, j));
    EXPECT_LE(err, last + 1e-9);
    last = err;
  }
  EXPECT_LT(last, 1e-8 * f.norm());
}

TEST(Pca, ExplainedVarianceSortedAndSumsToTotal) {
  const auto f = random_features(3, 120, 6);
  const auto e = pca_reduce(f, 6);
  for (Eigen::Index k = 1; k < e.explained_variance.size(); ++k) {
    EXPECT_GE(e.explained_variance(k - 1), e.explained_variance(k));
  }
  const Eigen::MatrixXd c = f.rowwise() - f.colwise().mean();
  const double total = c.squaredNorm() / static_cast<double>(f.rows() - 1);
  EXPECT_NEAR(e.explained_variance.sum(), total, 1e-9 * total);
}

TEST(Pca, CoordinatesAreProjections) {
  const auto f = random_features(4, 80, 7);
  const auto e = pca_reduce(f, 3);
  const Eigen::MatrixXd proj = (f.rowwise() - e.center.transpose()) * e.basis;
  EXPECT_LT((proj - e.coords).cwiseAbs().maxCoeff(), 1e-10);
  for (Eigen::Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(e.coords.col(c).mean(), 0.0, 1e-10);
  }
}

TEST(Pca, SignRuleIsDeterministic) {
  const auto f = random_features(5, 60, 5);
  const auto e = pca_reduce(f, 5);
  for (Eigen::Index c = 0; c < 5; ++c) {
    Eigen::Index arg;
    e.basis.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(e.basis(arg, c), 0.0);
  }
  const auto flipped = pca_reduce(-f, 5);
  EXPECT_LT((flipped.basis.cwiseAbs() - e.basis.cwiseAbs()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Pca, RankDeficientInputReducesJWithWarning) {
  const auto f = random_features(6, 100, 8, 3);
  const auto e = pca_reduce(f, 6);
  EXPECT_EQ(e.dims(), 3u);
  EXPECT_FALSE(e.warnings.empty());
  EXPECT_LT(reconstruction_error(f, e), 1e-8 * f.norm());
}

TEST(Pca, FullRankKeepsNearestNeighbours) {
  const auto f = random_features(7, 90, 5);
  const auto e = pca_reduce(f, 5);
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    EXPECT_EQ(nearest(e.coords, r), nearest(f, r)) << "row " << r;
  }
}

TEST(Pca, TopComponentsKeepMostNeighboursOfLowRankData) {
  // Data that is nearly rank 2: the top two coordinates should preserve neighbours.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> tiny(0.0, 1e-6);
  Eigen::MatrixXd f = random_features(8, 70, 6, 2);
  for (auto& x : f.reshaped()) x += tiny(rng);
  const auto e = pca_reduce(f, 2);
  int agree = 0;
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    agree += nearest(e.coords, r) == nearest(f, r) ? 1 : 0;
  }
  EXPECT_GE(agree, 68);
}

TEST(Pca, RejectsTooFewRows) {
  EXPECT_THROW(pca_reduce(Eigen::MatrixXd::Ones(1, 3), 1), ValidationError);
}

TEST(Truncate, KeepsLeadingColumnsUncentered) {
  const auto f = random_features(9, 30, 4);
  const auto e = truncate_reduce(f, 2);
  EXPECT_EQ(e.reduction, "truncate");
  EXPECT_TRUE(e.coords == f.leftCols(2));
  EXPECT_EQ(truncate_reduce(f, 4).reduction, "identity");
  EXPECT_LT(reconstruction_error(f, truncate_reduce(f, 4)), 1e-12);
}

TEST(AssembleFeatures, DescendingPrefixAndTextColumns) {
  const auto geo = generate_geography(50, 3);
  Eigen::MatrixXd text = Eigen::MatrixXd::Random(50, 8);
  FeatureSpec spec;
  spec.columns = {"-latitude", "elevation"};
  spec.text_dims = 3;
  const auto fm = assemble_features(geo.attributes, &text, spec);
  ASSERT_EQ(fm.values.cols(), 5);
  EXPECT_EQ(fm.column_names[0], "-latitude");
  EXPECT_EQ(fm.column_names[4], "text_2");
  const auto lat = geo.attributes.column("latitude");
  EXPECT_LT((fm.values.col(0) - standardize_feature(lat, Direction::descending)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(fm.values.rightCols(3) == text.leftCols(3));
}

TEST(AssembleFeatures, Errors) {
  const auto geo = generate_geography(20, 3);
  FeatureSpec spec;
  spec.columns = {"religion"};
  EXPECT_THROW(assemble_features(geo.attributes, nullptr, spec), ValidationError);
  spec.columns.clear();
  EXPECT_THROW(assemble_features(geo.attributes, nullptr, spec), ValidationError);
  spec.text_dims = 2;
  EXPECT_THROW(assemble_features(geo.attributes, nullptr, spec), ValidationError);
}

TEST(Lookup, ReturnsRowAndChecksRange) {
  const auto e = pca_reduce(random_features(10, 20, 3), 2);
  EXPECT_TRUE(lookup(e, 4) == e.coords.row(4).transpose());
  EXPECT_THROW(lookup(e, 20), Error);
}
