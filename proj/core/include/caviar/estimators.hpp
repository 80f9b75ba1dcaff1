#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caviar/domain.hpp"
#include "caviar/embed.hpp"

namespace caviar {

/// Dense covariates entered alongside the level effects: X columns, then one
/// indicator per non-reference factor label.
struct CovariateDesign {
  Eigen::MatrixXd z;  // n x k
  std::vector<std::string> names;
};

CovariateDesign covariate_design(const ObservationTable& data);

struct DenseOptions {
  bool level_indicators = true;  // one column per observed level
  bool intercept = false;
};

/// Materialized least squares via column-pivoted QR. Reference implementation for small problems.
FitResult fit_ols_dense(const ObservationTable& data, const DenseOptions& options = {});

/// Saturated fixed-effects fit by the within transformation. Same parameterization as
/// fit_ols_dense with default options: no intercept, one effect per observed level.
FitResult fit_ols_absorbed(const ObservationTable& data);

/// sqrt(sigma2 / n_z + zbar_z' Cov(coef) zbar_z) per level; NaN for unobserved levels.
Eigen::VectorXd fe_standard_errors(const FitResult& fit, const ObservationTable& data);

/**
 * Levels seen fewer than `threshold` times join the intercept's reference group.
 * Kept levels report effects relative to that group; merged levels report 0.
 */
FitResult fit_merged_rare(const ObservationTable& data, std::size_t threshold);

struct LassoOptions {
  std::size_t num_lambda = 100;
  double lambda_min_ratio = 1e-4;
  std::vector<double> lambdas;  // explicit descending grid; overrides the two fields above
  double tolerance = 1e-7;      // max coefficient change, standardized scale
  std::size_t max_sweeps = 100000;
};

/// Nonzero level coefficients at one grid point, on the original (unstandardized) scale.
struct LassoSolution {
  double lambda = 0.0;
  double intercept = 0.0;
  Eigen::VectorXd coef;  // unpenalized covariates
  std::vector<std::pair<LevelId, double>> active;
  std::size_t sweeps = 0;
};

struct LassoPath {
  std::vector<double> lambdas;  // descending
  std::vector<LassoSolution> solutions;
  std::vector<std::string> coef_names;
  double lambda_max = 0.0;

  std::size_t active_count(std::size_t point) const { return solutions.at(point).active.size(); }
};

/**
 * Coordinate-descent LASSO over standardized level indicators, with the intercept and
 * every dense covariate unpenalized:
 *   (1/2n) |y - a - Z b - sum_z theta_z D_z|^2 + lambda * sum_z s_z |theta_z|,
 * s_z = sqrt(p_z (1 - p_z)). lambda_max is computed on the residual of the
 * unpenalized fit.
 */
LassoPath lasso_path(const ObservationTable& data, const LassoOptions& options = {});

/// Same, restricted to the given rows (used for cross-validation training sets).
LassoPath lasso_path(const ObservationTable& data, std::span<const std::size_t> rows, const LassoOptions& options);

/// Largest violation of the optimality conditions at one grid point:
/// |<x_j, r>/n| <= lambda for inactive j, = lambda sign(b_j) for active j,
/// and zero gradient for unpenalized columns.
double lasso_kkt_violation(const ObservationTable& data, const LassoSolution& solution);

struct CvOptions {
  std::size_t folds = 10;
  std::uint64_t seed = 7;
  unsigned threads = 1;
  std::size_t max_reshuffles = 10;
  LassoOptions lasso;
};

struct CvResult {
  std::vector<double> lambdas;
  std::vector<double> cvm;   // mean squared prediction error over all held-out rows
  std::vector<double> cvsd;  // standard error of cvm across folds
  std::size_t index_min = 0;
  std::size_t index_1se = 0;
  double lambda_min = 0.0;
  double lambda_1se = 0.0;
  std::uint64_t seed = 0;
  std::size_t reshuffles = 0;
  std::vector<std::uint32_t> fold;  // per row
  LassoPath path;                   // full-data path on the same grid
};

CvResult cv_lasso(const ObservationTable& data, const CvOptions& options = {});

/// Converts one path point into a FitResult. Observed levels with a zero coefficient
/// are `pooled` and report the intercept; effects are absolute (intercept included).
FitResult lasso_fit_result(const ObservationTable& data, const LassoPath& path, std::size_t point,
                           const std::string& label = "lasso");

/**
 * OLS of y on [1, covariates, x_hat(level)]; each level's effect is x_hat_l' gamma
 * with variance x_hat_l' Cov(gamma) x_hat_l. Levels without observations are
 * extrapolated from their coordinates.
 */
FitResult fit_caviar(const ObservationTable& data, const EmbeddingMatrix& emb);

}  // namespace caviar
