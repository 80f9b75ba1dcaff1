#include <cmath>
#include <limits>

#include "caviar/estimators.hpp"
#include "linalg.hpp"

namespace caviar {

FitResult fit_caviar(const ObservationTable& data, const EmbeddingMatrix& emb) {
  data.validate();
  const auto num_levels = data.num_levels();
  if (emb.num_levels() != num_levels) {
    throw ValidationError("embedding has " + std::to_string(emb.num_levels()) + " rows but the data registers " +
                          std::to_string(num_levels) + " levels");
  }
  if (!emb.coords.allFinite()) {
    throw ValidationError("embedding coordinates contain non-finite values");
  }
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto design = covariate_design(data);
  const auto k = design.z.cols();
  const auto j_all = static_cast<Eigen::Index>(emb.dims());

  std::vector<std::string> emb_names;
  for (Eigen::Index j = 0; j < j_all; ++j) {
    emb_names.push_back("gamma_" + std::to_string(j + 1));
  }
  std::vector<std::string> names{"(intercept)"};
  names.insert(names.end(), design.names.begin(), design.names.end());

  // Covariates alone must be full rank; embedding columns that add nothing are dropped.
  Eigen::MatrixXd base(n, 1 + k);
  base.col(0).setOnes();
  base.rightCols(k) = design.z;
  {
    const auto ls = detail::least_squares(base, data.y);
    if (ls.rank < base.cols()) {
      throw NumericalError("covariates are collinear with each other or the intercept: " +
                           detail::join_names(names, ls.collinear));
    }
  }

  FitResult fit;
  fit.estimator = "caviar";
  fit.settings["reduction"] = emb.reduction;
  fit.warnings = emb.warnings;

  std::vector<Eigen::Index> kept;
  Eigen::MatrixXd x;
  detail::LeastSquares ls;
  for (Eigen::Index j = 0; j < j_all; ++j) {
    kept.push_back(j);
  }
  while (true) {
    x.resize(n, 1 + k + static_cast<Eigen::Index>(kept.size()));
    x.leftCols(1 + k) = base;
    for (std::size_t c = 0; c < kept.size(); ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        x(i, 1 + k + static_cast<Eigen::Index>(c)) = emb.coords(data.level[static_cast<std::size_t>(i)], kept[c]);
      }
    }
    ls = detail::least_squares(x, data.y);
    if (ls.rank == x.cols()) {
      break;
    }
    // Drop the highest-numbered embedding column among those reported collinear.
    const auto drop = ls.collinear.back() - 1 - k;
    if (drop < 0) {
      throw NumericalError("embedding columns could not be separated from the covariates");
    }
    fit.warnings.push_back("embedding column " + emb_names[static_cast<std::size_t>(kept[static_cast<std::size_t>(drop)])] +
                           " is collinear with the other columns and was dropped");
    kept.erase(kept.begin() + drop);
  }

  const auto p = x.cols();
  fit.num_observations = static_cast<std::size_t>(n);
  fit.num_parameters = static_cast<std::size_t>(p);
  fit.df = static_cast<long long>(n - p);
  if (fit.df <= 0) {
    throw NumericalError("embedding fit has no residual degrees of freedom: n=" + std::to_string(n) +
                         ", parameters=" + std::to_string(p));
  }
  fit.rss = ls.rss;
  fit.tss = detail::centered_sum_of_squares(data.y);
  fit.sigma2 = ls.rss / static_cast<double>(fit.df);
  fit.residuals = ls.residuals;
  fit.level_counts = data.level_counts();
  const Eigen::MatrixXd full_cov = fit.sigma2 * ls.xtx_inv;

  fit.has_intercept = true;
  fit.alpha = ls.coef(0);
  fit.coef_names = design.names;
  fit.coef.resize(k + j_all);
  fit.coef.head(k) = ls.coef.segment(1, k);
  fit.coef.tail(j_all).setZero();
  fit.coef_names.insert(fit.coef_names.end(), emb_names.begin(), emb_names.end());
  // Covariance over (alpha, covariates, all J gamma); dropped gammas carry zero variance.
  std::vector<Eigen::Index> pos(static_cast<std::size_t>(1 + k + j_all), -1);
  for (Eigen::Index c = 0; c < 1 + k; ++c) {
    pos[static_cast<std::size_t>(c)] = c;
  }
  for (std::size_t c = 0; c < kept.size(); ++c) {
    pos[static_cast<std::size_t>(1 + k + kept[c])] = 1 + k + static_cast<Eigen::Index>(c);
    fit.coef(k + kept[c]) = ls.coef(1 + k + static_cast<Eigen::Index>(c));
  }
  const auto width = static_cast<Eigen::Index>(pos.size());
  fit.cov = Eigen::MatrixXd::Zero(width, width);
  for (Eigen::Index a = 0; a < width; ++a) {
    for (Eigen::Index b = 0; b < width; ++b) {
      const auto pa = pos[static_cast<std::size_t>(a)];
      const auto pb = pos[static_cast<std::size_t>(b)];
      if (pa >= 0 && pb >= 0) {
        fit.cov(a, b) = full_cov(pa, pb);
      }
    }
  }
  fit.settings["dims"] = std::to_string(j_all);
  fit.settings["dims_used"] = std::to_string(kept.size());

  const Eigen::VectorXd gamma = fit.coef.tail(j_all);
  const Eigen::MatrixXd cov_gamma = fit.cov.bottomRightCorner(j_all, j_all);
  const auto l = static_cast<Eigen::Index>(num_levels);
  fit.fe = emb.coords * gamma;
  fit.fe_se.resize(l);
  fit.fe_status.assign(num_levels, LevelStatus::estimated);
  for (Eigen::Index z = 0; z < l; ++z) {
    if (fit.level_counts[static_cast<std::size_t>(z)] == 0) {
      fit.fe_status[static_cast<std::size_t>(z)] = LevelStatus::extrapolated;
    }
    const Eigen::RowVectorXd xz = emb.coords.row(z);
    fit.fe_se(z) = std::sqrt(std::max(0.0, (xz * cov_gamma * xz.transpose())(0, 0)));
  }
  FeCovariance fc;
  fc.diag = Eigen::VectorXd::Zero(l);
  fc.loading = emb.coords;
  fc.core = cov_gamma;
  fit.fe_cov = std::move(fc);
  return fit;
}

}  // namespace caviar
