#include <algorithm>
#include <cmath>
#include <limits>

#include "caviar/estimators.hpp"
#include "linalg.hpp"

namespace caviar {
namespace detail {

LeastSquares least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  LeastSquares out;
  const auto p = x.cols();
  if (p == 0) {
    out.residuals = y;
    out.rss = y.squaredNorm();
    out.xtx_inv.resize(0, 0);
    return out;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  out.rank = qr.rank();
  if (out.rank < p) {
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index c = out.rank; c < p; ++c) {
      out.collinear.push_back(perm(c));
    }
    std::sort(out.collinear.begin(), out.collinear.end());
    return out;
  }
  out.coef = qr.solve(y);
  out.residuals = y - x * out.coef;
  out.rss = out.residuals.squaredNorm();
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd permuted = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  out.xtx_inv = perm * permuted * perm.transpose();
  out.xtx_inv = 0.5 * (out.xtx_inv + out.xtx_inv.transpose());
  return out;
}

std::string join_names(const std::vector<std::string>& names, const std::vector<Eigen::Index>& which) {
  std::string out;
  for (auto c : which) {
    if (!out.empty()) {
      out += ", ";
    }
    out += names.at(static_cast<std::size_t>(c));
  }
  return out;
}

double centered_sum_of_squares(const Eigen::VectorXd& y) {
  if (y.size() == 0) {
    return 0.0;
  }
  return (y.array() - y.mean()).square().sum();
}

}  // namespace detail

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Within-group estimate of the covariate coefficients for an arbitrary grouping of rows.
struct Absorbed {
  std::vector<std::size_t> group_counts;
  Eigen::VectorXd ybar;  // per group
  Eigen::MatrixXd zbar;  // per group x k
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;
  Eigen::VectorXd residuals;
  double rss = 0.0;
  double sigma2 = 0.0;
  long long df = 0;
  std::size_t groups_used = 0;
};

Absorbed absorb(const ObservationTable& data, const CovariateDesign& design, const std::vector<std::size_t>& group,
                std::size_t num_groups, const char* what) {
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto k = design.z.cols();
  Absorbed a;
  a.group_counts.assign(num_groups, 0);
  a.ybar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_groups));
  a.zbar = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_groups), k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = static_cast<Eigen::Index>(group[static_cast<std::size_t>(i)]);
    ++a.group_counts[static_cast<std::size_t>(g)];
    a.ybar(g) += data.y(i);
    a.zbar.row(g) += design.z.row(i);
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (a.group_counts[g] > 0) {
      const double c = static_cast<double>(a.group_counts[g]);
      a.ybar(static_cast<Eigen::Index>(g)) /= c;
      a.zbar.row(static_cast<Eigen::Index>(g)) /= c;
      ++a.groups_used;
    }
  }
  Eigen::VectorXd y_within(n);
  Eigen::MatrixXd z_within(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = static_cast<Eigen::Index>(group[static_cast<std::size_t>(i)]);
    y_within(i) = data.y(i) - a.ybar(g);
    z_within.row(i) = design.z.row(i) - a.zbar.row(g);
  }
  a.df = static_cast<long long>(n) - static_cast<long long>(a.groups_used) - static_cast<long long>(k);
  if (a.df <= 0) {
    throw NumericalError(std::string(what) + " has no residual degrees of freedom: n=" + std::to_string(n) +
                         ", groups=" + std::to_string(a.groups_used) + ", covariates=" + std::to_string(k));
  }
  const auto ls = detail::least_squares(z_within, y_within);
  if (ls.rank < k) {
    throw NumericalError(std::string(what) + ": covariates collinear after removing level means: " +
                         detail::join_names(design.names, ls.collinear));
  }
  a.coef = k > 0 ? ls.coef : Eigen::VectorXd();
  a.residuals = ls.residuals;
  a.rss = ls.rss;
  a.sigma2 = a.rss / static_cast<double>(a.df);
  a.cov = a.sigma2 * ls.xtx_inv;
  return a;
}

void fill_fe_se(FitResult& fit) {
  const auto l = static_cast<Eigen::Index>(fit.num_levels());
  fit.fe_se = Eigen::VectorXd::Constant(l, kNaN);
  for (Eigen::Index z = 0; z < l; ++z) {
    const auto s = fit.fe_status[static_cast<std::size_t>(z)];
    if (s == LevelStatus::estimated || s == LevelStatus::extrapolated) {
      fit.fe_se(z) = std::sqrt(std::max(0.0, fit.fe_cov->variance(z)));
    }
  }
}

}  // namespace

CovariateDesign covariate_design(const ObservationTable& data) {
  const auto n = static_cast<Eigen::Index>(data.rows());
  Eigen::Index width = data.x.cols();
  for (const auto& f : data.factors) {
    width += static_cast<Eigen::Index>(f.labels.empty() ? 0 : f.labels.size() - 1);
  }
  CovariateDesign d;
  d.z = Eigen::MatrixXd::Zero(n, width);
  if (data.x.cols() > 0) {
    d.z.leftCols(data.x.cols()) = data.x;
  }
  d.names = data.covariate_names;
  d.names.resize(static_cast<std::size_t>(data.x.cols()));
  for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
    if (d.names[static_cast<std::size_t>(c)].empty()) {
      d.names[static_cast<std::size_t>(c)] = "x" + std::to_string(c);
    }
  }
  Eigen::Index col = data.x.cols();
  for (const auto& f : data.factors) {
    for (std::size_t lab = 1; lab < f.labels.size(); ++lab) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (f.index[static_cast<std::size_t>(i)] == lab) {
          d.z(i, col) = 1.0;
        }
      }
      d.names.push_back(f.name + "=" + f.labels[lab]);
      ++col;
    }
  }
  return d;
}

FitResult fit_ols_dense(const ObservationTable& data, const DenseOptions& options) {
  data.validate();
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto design = covariate_design(data);
  const auto counts = data.level_counts();
  const auto num_levels = static_cast<Eigen::Index>(data.num_levels());

  std::vector<Eigen::Index> level_col(static_cast<std::size_t>(num_levels), -1);
  std::vector<std::string> names;
  Eigen::Index p = 0;
  if (options.intercept) {
    names.emplace_back("(intercept)");
    ++p;
  }
  if (options.level_indicators) {
    for (Eigen::Index z = 0; z < num_levels; ++z) {
      if (counts[static_cast<std::size_t>(z)] > 0) {
        level_col[static_cast<std::size_t>(z)] = p++;
        names.push_back("level:" + data.levels.key(static_cast<LevelId>(z)));
      }
    }
  }
  const Eigen::Index cov_start = p;
  const auto k = design.z.cols();
  p += k;
  names.insert(names.end(), design.names.begin(), design.names.end());

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, p);
  if (options.intercept) {
    x.col(0).setOnes();
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = level_col[data.level[static_cast<std::size_t>(i)]];
    if (c >= 0) {
      x(i, c) = 1.0;
    }
  }
  x.rightCols(k) = design.z;

  if (n <= p) {
    throw NumericalError("dense fit needs more observations than parameters: n=" + std::to_string(n) +
                         ", parameters=" + std::to_string(p));
  }
  const auto ls = detail::least_squares(x, data.y);
  if (ls.rank < p) {
    throw NumericalError("design matrix is rank deficient (rank " + std::to_string(ls.rank) + " of " +
                         std::to_string(p) + "); collinear columns: " + detail::join_names(names, ls.collinear));
  }

  FitResult fit;
  fit.estimator = "ols-dense";
  fit.settings["intercept"] = options.intercept ? "true" : "false";
  fit.settings["level_indicators"] = options.level_indicators ? "true" : "false";
  fit.num_observations = static_cast<std::size_t>(n);
  fit.num_parameters = static_cast<std::size_t>(p);
  fit.df = static_cast<long long>(n - p);
  fit.rss = ls.rss;
  fit.tss = detail::centered_sum_of_squares(data.y);
  fit.sigma2 = ls.rss / static_cast<double>(fit.df);
  fit.residuals = ls.residuals;
  fit.level_counts = counts;
  const Eigen::MatrixXd full_cov = fit.sigma2 * ls.xtx_inv;

  fit.has_intercept = options.intercept;
  fit.coef_names = design.names;
  fit.coef = ls.coef.tail(k);
  if (options.intercept) {
    fit.alpha = ls.coef(0);
    std::vector<Eigen::Index> idx{0};
    for (Eigen::Index c = 0; c < k; ++c) {
      idx.push_back(cov_start + c);
    }
    fit.cov = full_cov(idx, idx);
  } else {
    fit.cov = full_cov.bottomRightCorner(k, k);
  }

  fit.fe = Eigen::VectorXd::Constant(num_levels, kNaN);
  fit.fe_status.assign(static_cast<std::size_t>(num_levels), LevelStatus::absent);
  std::vector<Eigen::Index> obs_cols;
  for (Eigen::Index z = 0; z < num_levels; ++z) {
    if (level_col[static_cast<std::size_t>(z)] >= 0) {
      obs_cols.push_back(level_col[static_cast<std::size_t>(z)]);
    }
  }
  FeCovariance fc;
  fc.diag = Eigen::VectorXd::Zero(num_levels);
  fc.loading = Eigen::MatrixXd::Zero(num_levels, static_cast<Eigen::Index>(obs_cols.size()));
  fc.core = full_cov(obs_cols, obs_cols);
  Eigen::Index j = 0;
  for (Eigen::Index z = 0; z < num_levels; ++z) {
    const auto c = level_col[static_cast<std::size_t>(z)];
    if (c >= 0) {
      fit.fe(z) = ls.coef(c);
      fit.fe_status[static_cast<std::size_t>(z)] = LevelStatus::estimated;
      fc.loading(z, j++) = 1.0;
    }
  }
  fit.fe_cov = std::move(fc);
  fill_fe_se(fit);
  return fit;
}

FitResult fit_ols_absorbed(const ObservationTable& data) {
  data.validate();
  const auto design = covariate_design(data);
  const auto num_levels = data.num_levels();
  std::vector<std::size_t> group(data.level.begin(), data.level.end());
  const auto a = absorb(data, design, group, num_levels, "saturated fit");
  const auto l = static_cast<Eigen::Index>(num_levels);

  FitResult fit;
  fit.estimator = "ols-absorbed";
  fit.num_observations = data.rows();
  fit.num_parameters = a.groups_used + static_cast<std::size_t>(design.z.cols());
  fit.df = a.df;
  fit.rss = a.rss;
  fit.tss = detail::centered_sum_of_squares(data.y);
  fit.sigma2 = a.sigma2;
  fit.residuals = a.residuals;
  fit.level_counts = a.group_counts;
  fit.coef_names = design.names;
  fit.coef = a.coef;
  fit.cov = a.cov;

  fit.fe = Eigen::VectorXd::Constant(l, kNaN);
  fit.fe_status.assign(num_levels, LevelStatus::absent);
  FeCovariance fc;
  fc.diag = Eigen::VectorXd::Zero(l);
  fc.loading = Eigen::MatrixXd::Zero(l, design.z.cols());
  fc.core = a.cov;
  for (Eigen::Index z = 0; z < l; ++z) {
    const auto c = a.group_counts[static_cast<std::size_t>(z)];
    if (c == 0) {
      continue;
    }
    fit.fe(z) = a.coef.size() > 0 ? a.ybar(z) - a.zbar.row(z).dot(a.coef) : a.ybar(z);
    fit.fe_status[static_cast<std::size_t>(z)] = LevelStatus::estimated;
    fc.diag(z) = a.sigma2 / static_cast<double>(c);
    fc.loading.row(z) = a.zbar.row(z);
  }
  fit.fe_cov = std::move(fc);
  fill_fe_se(fit);
  return fit;
}

Eigen::VectorXd fe_standard_errors(const FitResult& fit, const ObservationTable& data) {
  const auto design = covariate_design(data);
  const auto k = design.z.cols();
  if (fit.coef.size() != k || fit.cov.rows() != k) {
    throw ValidationError("fit does not match the covariate design of the data (" + std::to_string(k) +
                          " covariates)");
  }
  const auto l = static_cast<Eigen::Index>(data.num_levels());
  const auto counts = data.level_counts();
  Eigen::MatrixXd zbar = Eigen::MatrixXd::Zero(l, k);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    zbar.row(data.level[i]) += design.z.row(static_cast<Eigen::Index>(i));
  }
  Eigen::VectorXd se = Eigen::VectorXd::Constant(l, kNaN);
  for (Eigen::Index z = 0; z < l; ++z) {
    const auto c = counts[static_cast<std::size_t>(z)];
    if (c == 0) {
      continue;
    }
    const Eigen::RowVectorXd m = zbar.row(z) / static_cast<double>(c);
    se(z) = std::sqrt(fit.sigma2 / static_cast<double>(c) + (k > 0 ? (m * fit.cov * m.transpose())(0, 0) : 0.0));
  }
  return se;
}

FitResult fit_merged_rare(const ObservationTable& data, std::size_t threshold) {
  if (threshold < 1) {
    throw ValidationError("merge threshold must be at least 1");
  }
  data.validate();
  const auto counts = data.level_counts();
  const auto num_levels = data.num_levels();
  const bool any_merged =
      std::any_of(counts.begin(), counts.end(), [&](std::size_t c) { return c > 0 && c < threshold; });
  if (!any_merged) {
    auto fit = fit_ols_absorbed(data);
    fit.estimator = "merged";
    fit.settings["threshold"] = std::to_string(threshold);
    fit.settings["merged_levels"] = "0";
    return fit;
  }

  // Group 0 is the reference (merged) group; kept level z maps to group g(z) >= 1.
  std::vector<std::size_t> level_group(num_levels, 0);
  std::size_t num_groups = 1;
  std::size_t merged = 0;
  for (std::size_t z = 0; z < num_levels; ++z) {
    if (counts[z] >= threshold) {
      level_group[z] = num_groups++;
    } else if (counts[z] > 0) {
      ++merged;
    }
  }
  std::vector<std::size_t> group(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    group[i] = level_group[data.level[i]];
  }
  const auto design = covariate_design(data);
  const auto k = design.z.cols();
  const auto a = absorb(data, design, group, num_groups, "merged fit");
  const auto l = static_cast<Eigen::Index>(num_levels);
  const double n_ref = static_cast<double>(a.group_counts[0]);
  const Eigen::RowVectorXd zbar_ref = a.zbar.row(0);

  FitResult fit;
  fit.estimator = "merged";
  fit.settings["threshold"] = std::to_string(threshold);
  fit.settings["merged_levels"] = std::to_string(merged);
  fit.num_observations = data.rows();
  fit.num_parameters = a.groups_used + static_cast<std::size_t>(k);
  fit.df = a.df;
  fit.rss = a.rss;
  fit.tss = detail::centered_sum_of_squares(data.y);
  fit.sigma2 = a.sigma2;
  fit.residuals = a.residuals;
  fit.level_counts = counts;
  fit.coef_names = design.names;
  fit.coef = a.coef;
  fit.has_intercept = true;
  fit.alpha = k > 0 ? a.ybar(0) - zbar_ref.dot(a.coef) : a.ybar(0);
  fit.cov = Eigen::MatrixXd::Zero(k + 1, k + 1);
  fit.cov(0, 0) = a.sigma2 / n_ref + (k > 0 ? (zbar_ref * a.cov * zbar_ref.transpose())(0, 0) : 0.0);
  if (k > 0) {
    const Eigen::RowVectorXd cross = -zbar_ref * a.cov;
    fit.cov.block(0, 1, 1, k) = cross;
    fit.cov.block(1, 0, k, 1) = cross.transpose();
    fit.cov.bottomRightCorner(k, k) = a.cov;
  }

  fit.fe = Eigen::VectorXd::Constant(l, kNaN);
  fit.fe_status.assign(num_levels, LevelStatus::absent);
  FeCovariance fc;
  fc.diag = Eigen::VectorXd::Zero(l);
  fc.loading = Eigen::MatrixXd::Zero(l, k + 1);
  fc.core = Eigen::MatrixXd::Zero(k + 1, k + 1);
  fc.core.topLeftCorner(k, k) = a.cov;
  fc.core(k, k) = a.sigma2 / n_ref;
  for (Eigen::Index z = 0; z < l; ++z) {
    const auto c = counts[static_cast<std::size_t>(z)];
    if (c == 0) {
      continue;
    }
    if (c < threshold) {
      fit.fe(z) = 0.0;
      fit.fe_status[static_cast<std::size_t>(z)] = LevelStatus::merged;
      continue;
    }
    const auto g = static_cast<Eigen::Index>(level_group[static_cast<std::size_t>(z)]);
    const Eigen::RowVectorXd dz = a.zbar.row(g) - zbar_ref;
    fit.fe(z) = a.ybar(g) - a.ybar(0) - (k > 0 ? dz.dot(a.coef) : 0.0);
    fit.fe_status[static_cast<std::size_t>(z)] = LevelStatus::estimated;
    fc.diag(z) = a.sigma2 / static_cast<double>(c);
    fc.loading.block(z, 0, 1, k) = dz;
    fc.loading(z, k) = 1.0;
  }
  fit.fe_cov = std::move(fc);
  fill_fe_se(fit);
  return fit;
}

}  // namespace caviar
