#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "caviar/estimators.hpp"
#include "caviar/rng.hpp"
#include "linalg.hpp"

namespace caviar {
namespace {

/// Per-level sufficient statistics of the training rows. Every coordinate update and
/// the unpenalized block solve work on these, so a sweep costs O(L k) regardless of n.
struct Problem {
  double n = 0.0;
  Eigen::Index k = 0;  // unpenalized columns including the intercept
  std::vector<LevelId> levels;
  std::vector<double> count;
  std::vector<double> scale;  // s_z = sqrt(p_z (1 - p_z))
  Eigen::VectorXd sum_y;
  Eigen::MatrixXd sum_w;  // levels x k, column 0 = counts
  Eigen::VectorXd wty;
  Eigen::LDLT<Eigen::MatrixXd> wtw;
  Eigen::VectorXd sd_w;  // 1/n standard deviation per unpenalized column (intercept: 1)
  std::vector<std::string> names;

  Problem(const ObservationTable& data, std::span<const std::size_t> rows);

  Eigen::VectorXd solve_unpenalized(const std::vector<double>& theta) const {
    Eigen::VectorXd rhs = wty;
    for (std::size_t q = 0; q < levels.size(); ++q) {
      if (theta[q] != 0.0) {
        rhs -= theta[q] * sum_w.row(static_cast<Eigen::Index>(q)).transpose();
      }
    }
    return wtw.solve(rhs);
  }

  /// <x_z, r>/n on the standardized scale with theta_z removed from r.
  double partial_score(std::size_t q, const Eigen::VectorXd& c) const {
    const auto row = static_cast<Eigen::Index>(q);
    return (sum_y(row) - sum_w.row(row).dot(c)) / (n * scale[q]);
  }
};

Problem::Problem(const ObservationTable& data, std::span<const std::size_t> rows) {
  const auto design = covariate_design(data);
  k = design.z.cols() + 1;
  n = static_cast<double>(rows.size());
  if (rows.empty()) {
    throw ValidationError("lasso needs at least one row");
  }
  names = design.names;
  std::vector<Eigen::Index> slot(data.num_levels(), -1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto z = data.level[rows[r]];
    if (slot[z] < 0) {
      slot[z] = 0;  // mark; slots assigned in level order below
    }
  }
  for (std::size_t z = 0; z < slot.size(); ++z) {
    if (slot[z] >= 0) {
      slot[z] = static_cast<Eigen::Index>(levels.size());
      levels.push_back(static_cast<LevelId>(z));
    }
  }
  const auto m = static_cast<Eigen::Index>(levels.size());
  sum_y = Eigen::VectorXd::Zero(m);
  sum_w = Eigen::MatrixXd::Zero(m, k);
  Eigen::MatrixXd w_gram = Eigen::MatrixXd::Zero(k, k);
  wty = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd w(k);
  for (auto i : rows) {
    const auto q = slot[data.level[i]];
    w(0) = 1.0;
    w.tail(k - 1) = design.z.row(static_cast<Eigen::Index>(i)).transpose();
    sum_y(q) += data.y(static_cast<Eigen::Index>(i));
    sum_w.row(q) += w.transpose();
    w_gram.selfadjointView<Eigen::Lower>().rankUpdate(w);
    wty += data.y(static_cast<Eigen::Index>(i)) * w;
  }
  w_gram = w_gram.selfadjointView<Eigen::Lower>();
  sd_w = Eigen::VectorXd::Ones(k);
  for (Eigen::Index j = 1; j < k; ++j) {
    const double mean = w_gram(0, j) / n;
    const double var = w_gram(j, j) / n - mean * mean;
    const double scale_j = std::max(std::abs(w_gram(j, j) / n), 1.0);
    if (!(var > 1e-12 * scale_j)) {
      throw NumericalError("unpenalized covariate '" + names[static_cast<std::size_t>(j - 1)] +
                           "' has no variation in the fitted rows");
    }
    sd_w(j) = std::sqrt(var);
  }
  wtw.compute(w_gram);
  if (wtw.info() != Eigen::Success || (wtw.vectorD().array() <= 1e-12 * w_gram.diagonal().maxCoeff()).any()) {
    throw NumericalError("unpenalized covariates are collinear in the fitted rows");
  }
  count.resize(levels.size());
  scale.resize(levels.size());
  for (std::size_t q = 0; q < levels.size(); ++q) {
    count[q] = sum_w(static_cast<Eigen::Index>(q), 0);
    const double p = count[q] / n;
    scale[q] = std::sqrt(p * (1.0 - p));
  }
}

std::vector<double> make_grid(double lambda_max, const LassoOptions& options) {
  if (!options.lambdas.empty()) {
    for (std::size_t i = 0; i < options.lambdas.size(); ++i) {
      if (!(options.lambdas[i] > 0.0) || (i > 0 && options.lambdas[i] >= options.lambdas[i - 1])) {
        throw ValidationError("lambda grid must be positive and strictly decreasing");
      }
    }
    return options.lambdas;
  }
  if (options.num_lambda < 1 || !(options.lambda_min_ratio > 0.0 && options.lambda_min_ratio < 1.0)) {
    throw ValidationError("lambda grid needs num_lambda >= 1 and 0 < lambda_min_ratio < 1");
  }
  std::vector<double> grid(options.num_lambda);
  if (!(lambda_max > 0.0)) {
    lambda_max = 1e-12;  // nothing to select; keep a valid grid
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid.size() == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    grid[i] = lambda_max * std::pow(options.lambda_min_ratio, t);
  }
  grid[0] = lambda_max;
  return grid;
}

LassoPath run_path(const ObservationTable& data, std::span<const std::size_t> rows, const LassoOptions& options) {
  const Problem prob(data, rows);
  const std::size_t m = prob.levels.size();
  std::vector<double> theta(m, 0.0);
  Eigen::VectorXd c = prob.solve_unpenalized(theta);

  LassoPath path;
  path.coef_names = prob.names;
  for (std::size_t q = 0; q < m; ++q) {
    if (prob.scale[q] > 0.0) {
      path.lambda_max = std::max(path.lambda_max, std::abs(prob.partial_score(q, c)));
    }
  }
  path.lambdas = make_grid(path.lambda_max, options);

  for (const double lambda : path.lambdas) {
    std::size_t sweep = 0;
    double max_change = std::numeric_limits<double>::infinity();
    while (max_change >= options.tolerance) {
      if (++sweep > options.max_sweeps) {
        throw NumericalError("lasso did not converge at lambda=" + std::to_string(lambda) + " after " +
                             std::to_string(options.max_sweeps) + " sweeps (last max change " +
                             std::to_string(max_change) + ")");
      }
      max_change = 0.0;
      const Eigen::VectorXd c_new = prob.solve_unpenalized(theta);
      for (Eigen::Index j = 1; j < prob.k; ++j) {
        max_change = std::max(max_change, std::abs(c_new(j) - c(j)) * prob.sd_w(j));
      }
      c = c_new;
      for (std::size_t q = 0; q < m; ++q) {
        if (prob.scale[q] <= 0.0) {
          continue;  // a level covering every row is the intercept
        }
        const double u = prob.partial_score(q, c);
        const double next =
            std::abs(u) <= lambda ? 0.0 : (u - std::copysign(lambda, u)) * prob.n * prob.scale[q] / prob.count[q];
        max_change = std::max(max_change, std::abs(next - theta[q]) * prob.scale[q]);
        theta[q] = next;
      }
    }
    c = prob.solve_unpenalized(theta);
    LassoSolution sol;
    sol.lambda = lambda;
    sol.intercept = c(0);
    sol.coef = c.tail(prob.k - 1);
    sol.sweeps = sweep;
    for (std::size_t q = 0; q < m; ++q) {
      if (theta[q] != 0.0) {
        sol.active.emplace_back(prob.levels[q], theta[q]);
      }
    }
    path.solutions.push_back(std::move(sol));
  }
  return path;
}

Eigen::VectorXd level_coefficients(const LassoSolution& sol, std::size_t num_levels) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_levels));
  for (const auto& [z, v] : sol.active) {
    theta(z) = v;
  }
  return theta;
}

std::vector<std::uint32_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed, std::uint32_t attempt) {
  const Philox rng(seed, Stream::fold_assignment);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i-- > 1;) {
    const double u = rng.block(i, attempt)[0] * (1.0 / 4294967296.0);
    const auto j = std::min(i, static_cast<std::size_t>(u * static_cast<double>(i + 1)));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::uint32_t> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    fold[perm[pos]] = static_cast<std::uint32_t>(pos % folds);
  }
  return fold;
}

bool folds_keep_covariate_variation(const CovariateDesign& design, const std::vector<std::uint32_t>& fold,
                                    std::size_t folds) {
  const auto k = design.z.cols();
  if (k == 0) {
    return true;
  }
  for (std::size_t f = 0; f < folds; ++f) {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::infinity());
    Eigen::VectorXd hi = -lo;
    for (std::size_t i = 0; i < fold.size(); ++i) {
      if (fold[i] != f) {
        lo = lo.cwiseMin(design.z.row(static_cast<Eigen::Index>(i)).transpose());
        hi = hi.cwiseMax(design.z.row(static_cast<Eigen::Index>(i)).transpose());
      }
    }
    if (((hi - lo).array() <= 0.0).any()) {
      return false;
    }
  }
  return true;
}

}  // namespace

LassoPath lasso_path(const ObservationTable& data, const LassoOptions& options) {
  data.validate();
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return run_path(data, rows, options);
}

LassoPath lasso_path(const ObservationTable& data, std::span<const std::size_t> rows, const LassoOptions& options) {
  data.validate();
  for (auto r : rows) {
    if (r >= data.rows()) {
      throw ValidationError("row index " + std::to_string(r) + " out of range");
    }
  }
  return run_path(data, rows, options);
}

double lasso_kkt_violation(const ObservationTable& data, const LassoSolution& solution) {
  const auto design = covariate_design(data);
  const auto n = static_cast<Eigen::Index>(data.rows());
  const double nd = static_cast<double>(n);
  const auto num_levels = data.num_levels();
  const Eigen::VectorXd theta = level_coefficients(solution, num_levels);
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = data.level[static_cast<std::size_t>(i)];
    r(i) = data.y(i) - solution.intercept - theta(z) -
           (design.z.cols() > 0 ? design.z.row(i).dot(solution.coef) : 0.0);
  }
  const double r_sum = r.sum();
  double worst = std::abs(r_sum) / nd;
  for (Eigen::Index j = 0; j < design.z.cols(); ++j) {
    const auto col = design.z.col(j);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().mean());
    worst = std::max(worst, std::abs((col.array() - mean).matrix().dot(r)) / (nd * sd));
  }
  const auto counts = data.level_counts();
  Eigen::VectorXd group = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_levels));
  for (Eigen::Index i = 0; i < n; ++i) {
    group(data.level[static_cast<std::size_t>(i)]) += r(i);
  }
  for (std::size_t z = 0; z < num_levels; ++z) {
    if (counts[z] == 0) {
      continue;
    }
    const double p = static_cast<double>(counts[z]) / nd;
    const double s = std::sqrt(p * (1.0 - p));
    if (s <= 0.0) {
      continue;
    }
    const double g = (group(static_cast<Eigen::Index>(z)) - p * r_sum) / (nd * s);
    const double b = theta(static_cast<Eigen::Index>(z));
    const double v = b == 0.0 ? std::max(0.0, std::abs(g) - solution.lambda)
                              : std::abs(g - std::copysign(solution.lambda, b));
    worst = std::max(worst, v);
  }
  return worst;
}

CvResult cv_lasso(const ObservationTable& data, const CvOptions& options) {
  if (options.folds < 2) {
    throw ValidationError("cross-validation needs at least 2 folds");
  }
  data.validate();
  const std::size_t n = data.rows();
  if (n < options.folds) {
    throw ValidationError("fewer rows than folds");
  }
  const auto design = covariate_design(data);

  CvResult cv;
  cv.seed = options.seed;
  cv.path = lasso_path(data, options.lasso);
  cv.lambdas = cv.path.lambdas;

  std::uint32_t attempt = 0;
  cv.fold = assign_folds(n, options.folds, options.seed, attempt);
  while (!folds_keep_covariate_variation(design, cv.fold, options.folds)) {
    if (attempt >= options.max_reshuffles) {
      throw NumericalError("every fold assignment tried leaves a training set without variation in an "
                           "unpenalized covariate (" + std::to_string(attempt + 1) + " attempts)");
    }
    cv.fold = assign_folds(n, options.folds, options.seed, ++attempt);
  }
  cv.reshuffles = attempt;

  LassoOptions fold_options = options.lasso;
  fold_options.lambdas = cv.lambdas;
  const std::size_t num_lambda = cv.lambdas.size();
  std::vector<std::vector<double>> fold_mse(options.folds, std::vector<double>(num_lambda, 0.0));
  std::vector<std::size_t> fold_size(options.folds, 0);
  std::vector<std::exception_ptr> failures(options.folds);

  auto run_fold = [&](std::size_t f) {
    try {
      std::vector<std::size_t> train;
      std::vector<std::size_t> test;
      for (std::size_t i = 0; i < n; ++i) {
        (cv.fold[i] == f ? test : train).push_back(i);
      }
      const auto path = run_path(data, train, fold_options);
      fold_size[f] = test.size();
      for (std::size_t li = 0; li < num_lambda; ++li) {
        const auto& sol = path.solutions[li];
        const Eigen::VectorXd theta = level_coefficients(sol, data.num_levels());
        double sse = 0.0;
        for (auto i : test) {
          const auto row = static_cast<Eigen::Index>(i);
          const double pred = sol.intercept + theta(data.level[i]) +
                              (design.z.cols() > 0 ? design.z.row(row).dot(sol.coef) : 0.0);
          const double e = data.y(row) - pred;
          sse += e * e;
        }
        fold_mse[f][li] = sse / static_cast<double>(test.size());
      }
    } catch (...) {
      failures[f] = std::current_exception();
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(options.folds)));
  if (workers == 1) {
    for (std::size_t f = 0; f < options.folds; ++f) {
      run_fold(f);
    }
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t f = w; f < options.folds; f += workers) {
          run_fold(f);
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  for (auto& e : failures) {
    if (e) {
      std::rethrow_exception(e);
    }
  }

  cv.cvm.assign(num_lambda, 0.0);
  cv.cvsd.assign(num_lambda, 0.0);
  const double total = static_cast<double>(n);
  for (std::size_t li = 0; li < num_lambda; ++li) {
    double m = 0.0;
    for (std::size_t f = 0; f < options.folds; ++f) {
      m += static_cast<double>(fold_size[f]) * fold_mse[f][li];
    }
    m /= total;
    double v = 0.0;
    for (std::size_t f = 0; f < options.folds; ++f) {
      const double d = fold_mse[f][li] - m;
      v += static_cast<double>(fold_size[f]) * d * d;
    }
    v /= total;
    cv.cvm[li] = m;
    cv.cvsd[li] = std::sqrt(v / static_cast<double>(options.folds - 1));
  }
  cv.index_min = static_cast<std::size_t>(std::min_element(cv.cvm.begin(), cv.cvm.end()) - cv.cvm.begin());
  const double bound = cv.cvm[cv.index_min] + cv.cvsd[cv.index_min];
  cv.index_1se = cv.index_min;
  for (std::size_t li = 0; li < cv.index_min; ++li) {
    if (cv.cvm[li] <= bound) {
      cv.index_1se = li;
      break;
    }
  }
  cv.lambda_min = cv.lambdas[cv.index_min];
  cv.lambda_1se = cv.lambdas[cv.index_1se];
  return cv;
}

FitResult lasso_fit_result(const ObservationTable& data, const LassoPath& path, std::size_t point,
                           const std::string& label) {
  const auto& sol = path.solutions.at(point);
  const auto design = covariate_design(data);
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto num_levels = data.num_levels();
  const auto l = static_cast<Eigen::Index>(num_levels);
  const Eigen::VectorXd theta = level_coefficients(sol, num_levels);
  const auto counts = data.level_counts();
  const auto k = design.z.cols();

  FitResult fit;
  fit.estimator = label;
  fit.settings["lambda"] = std::to_string(sol.lambda);
  fit.settings["lambda_index"] = std::to_string(point);
  fit.has_intercept = true;
  fit.alpha = sol.intercept;
  fit.coef_names = path.coef_names;
  fit.coef = sol.coef;
  fit.cov = Eigen::MatrixXd::Constant(k + 1, k + 1, std::numeric_limits<double>::quiet_NaN());
  fit.warnings.push_back("penalized fit: no sampling covariance is reported");
  fit.level_counts = counts;
  fit.num_observations = static_cast<std::size_t>(n);
  fit.num_parameters = 1 + static_cast<std::size_t>(k) + sol.active.size();
  fit.df = static_cast<long long>(n) - static_cast<long long>(fit.num_parameters);
  fit.residuals.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = data.level[static_cast<std::size_t>(i)];
    fit.residuals(i) = data.y(i) - sol.intercept - theta(z) - (k > 0 ? design.z.row(i).dot(sol.coef) : 0.0);
  }
  fit.rss = fit.residuals.squaredNorm();
  fit.tss = detail::centered_sum_of_squares(data.y);
  fit.sigma2 = fit.df > 0 ? fit.rss / static_cast<double>(fit.df) : std::numeric_limits<double>::quiet_NaN();
  fit.fe = Eigen::VectorXd::Constant(l, std::numeric_limits<double>::quiet_NaN());
  fit.fe_se = fit.fe;
  fit.fe_status.assign(num_levels, LevelStatus::absent);
  for (Eigen::Index z = 0; z < l; ++z) {
    if (counts[static_cast<std::size_t>(z)] == 0) {
      continue;
    }
    fit.fe(z) = sol.intercept + theta(z);
    fit.fe_status[static_cast<std::size_t>(z)] = theta(z) != 0.0 ? LevelStatus::estimated : LevelStatus::pooled;
  }
  return fit;
}

}  // namespace caviar
