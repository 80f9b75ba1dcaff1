#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "caviar/domain.hpp"

namespace caviar {

struct Histogram {
  std::vector<double> edges;  // bins + 1, increasing
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;
};

struct HistogramOptions {
  std::size_t bins = 50;
  double width_sds = 4.0;                         // range = mean +/- width_sds * sd
  std::optional<std::pair<double, double>> range;  // fixed range overrides the above
};

Histogram make_histogram(const std::vector<double>& values, const HistogramOptions& options = {});

/**
 * Estimation error (estimate - truth) over the levels that carry an estimate from
 * their own data: status `estimated` or `pooled`. Merged, absent and extrapolated
 * levels are excluded.
 */
struct ErrorReport {
  Eigen::VectorXd error;  // per registered level; NaN where excluded
  std::vector<LevelId> included;
  std::size_t observations = 0;  // rows belonging to included levels

  double level_mean = 0.0;
  double level_variance = 0.0;  // n-1 denominator over levels
  double obs_mean = 0.0;        // sum_z (n_z / n) e_z
  double obs_variance = 0.0;    // sum_z (n_z / n) (e_z - obs_mean)^2
  double obs_mse = 0.0;         // sum_z (n_z / n) e_z^2
  double rmse = 0.0;            // level-weighted

  /// Standard error of obs_mean. "model" uses the fit's fixed-effect covariance,
  /// "empirical" the weighted spread of the errors.
  double obs_mean_sem = 0.0;
  std::string sem_method;

  Histogram histogram;
};

ErrorReport error_report(const FitResult& fit, const Eigen::VectorXd& truth, const HistogramOptions& options = {});

/// Right-continuous empirical distribution function.
class Ecdf {
 public:
  explicit Ecdf(std::vector<double> values);

  double operator()(double x) const;
  const std::vector<double>& support() const { return support_; }
  const std::vector<double>& cumulative() const { return cumulative_; }
  std::size_t size() const { return n_; }

 private:
  std::vector<double> support_;     // sorted distinct values
  std::vector<double> cumulative_;  // F at each support point
  std::size_t n_ = 0;
};

Ecdf ecdf(const std::vector<double>& values);

/**
 * Compares the observation-weighted mean squared standard error with the
 * observation-weighted mean squared estimation error over `estimated` levels.
 *   t = (mean_se2 - observed_var) / sem.
 * `sem` is the model-based standard deviation of the squared-error statistic,
 * sqrt(2 tr((W Sigma)^2)) with W = diag(n_z / n) and Sigma the fit's
 * fixed-effect covariance. `sem_iid` is the spread of per-observation squared
 * SEs divided by sqrt(n); `t_iid` uses it instead.
 */
struct PrecisionTest {
  double observed_var = 0.0;
  double mean_se2 = 0.0;
  double sem = 0.0;
  double t = 0.0;
  double sem_iid = 0.0;
  double t_iid = 0.0;
  std::size_t levels = 0;
  std::size_t observations = 0;
};

PrecisionTest precision_consistency(const FitResult& fit, const Eigen::VectorXd& truth);

struct SignificanceResult {
  std::size_t significant = 0;
  std::size_t total = 0;
  std::vector<bool> flags;  // per registered level
  double critical_value = 0.0;

  double fraction() const { return total > 0 ? static_cast<double>(significant) / static_cast<double>(total) : 0.0; }
};

/// Two-sided normal test of each `estimated` level effect against `null`.
SignificanceResult significance_count(const FitResult& fit, double null = 0.0, double level = 0.05);

struct OverfitReport {
  std::size_t zero_residuals = 0;
  std::size_t singleton_levels = 0;
  std::size_t parameters = 0;
  std::size_t observations = 0;
  double parameter_ratio = 0.0;
  double r_squared = 0.0;
  double adjusted_r_squared = 0.0;
  double threshold = 0.05;
  bool saturated = false;
};

OverfitReport overfit_report(const FitResult& fit, const ObservationTable& data, double threshold = 0.05);

}  // namespace caviar
