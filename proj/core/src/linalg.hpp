#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace caviar::detail {

struct LeastSquares {
  Eigen::VectorXd coef;
  Eigen::MatrixXd xtx_inv;           // (X'X)^-1, valid when rank == cols
  Eigen::Index rank = 0;
  std::vector<Eigen::Index> collinear;  // columns beyond the numerical rank, ascending
  Eigen::VectorXd residuals;
  double rss = 0.0;
};

/// Column-pivoted Householder QR solve. When rank deficient only `rank` and `collinear` are set.
LeastSquares least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

std::string join_names(const std::vector<std::string>& names, const std::vector<Eigen::Index>& which);

double centered_sum_of_squares(const Eigen::VectorXd& y);

}  // namespace caviar::detail
