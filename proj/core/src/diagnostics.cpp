#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "caviar/diagnostics.hpp"

namespace caviar {
namespace {

void check_truth(const FitResult& fit, const Eigen::VectorXd& truth) {
  if (static_cast<std::size_t>(truth.size()) != fit.num_levels()) {
    throw ValidationError("truth has " + std::to_string(truth.size()) + " entries for " +
                          std::to_string(fit.num_levels()) + " levels");
  }
}

bool has_own_estimate(LevelStatus s) { return s == LevelStatus::estimated || s == LevelStatus::pooled; }

/// Var(sum_z w_z fe_z) under the structured covariance; w is zero outside the included levels.
double weighted_variance(const FeCovariance& cov, const Eigen::VectorXd& w) {
  const Eigen::VectorXd aw = cov.loading.transpose() * w;
  return (w.array().square() * cov.diag.array()).sum() + aw.dot(cov.core * aw);
}

}  // namespace

Histogram make_histogram(const std::vector<double>& values, const HistogramOptions& options) {
  if (options.bins == 0) {
    throw ValidationError("histogram needs at least one bin");
  }
  double lo = 0.0;
  double hi = 1.0;
  if (options.range) {
    std::tie(lo, hi) = *options.range;
  } else if (!values.empty()) {
    double mean = 0.0;
    for (double v : values) {
      mean += v;
    }
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
      ss += (v - mean) * (v - mean);
    }
    const double sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    const double half = sd > 0.0 ? options.width_sds * sd : std::max(1e-12, std::abs(mean) * 1e-6 + 1e-12);
    lo = mean - half;
    hi = mean + half;
  }
  if (!(hi > lo)) {
    throw ValidationError("histogram range must be increasing");
  }
  Histogram h;
  h.edges.resize(options.bins + 1);
  const double width = (hi - lo) / static_cast<double>(options.bins);
  for (std::size_t b = 0; b <= options.bins; ++b) {
    h.edges[b] = lo + width * static_cast<double>(b);
  }
  h.edges.back() = hi;
  h.counts.assign(options.bins, 0);
  for (double v : values) {
    if (v < lo) {
      ++h.underflow;
    } else if (v > hi) {
      ++h.overflow;
    } else {
      auto b = static_cast<std::size_t>((v - lo) / width);
      ++h.counts[std::min(b, options.bins - 1)];
    }
  }
  return h;
}

ErrorReport error_report(const FitResult& fit, const Eigen::VectorXd& truth, const HistogramOptions& options) {
  check_truth(fit, truth);
  const auto l = static_cast<Eigen::Index>(fit.num_levels());
  ErrorReport rep;
  rep.error = Eigen::VectorXd::Constant(l, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> errs;
  for (Eigen::Index z = 0; z < l; ++z) {
    if (!has_own_estimate(fit.fe_status[static_cast<std::size_t>(z)])) {
      continue;
    }
    if (!std::isfinite(truth(z))) {
      throw ValidationError("missing truth for level " + std::to_string(z));
    }
    rep.error(z) = fit.fe(z) - truth(z);
    rep.included.push_back(static_cast<LevelId>(z));
    rep.observations += fit.level_counts[static_cast<std::size_t>(z)];
    errs.push_back(rep.error(z));
  }
  if (errs.empty()) {
    throw ValidationError("fit has no levels with their own estimate");
  }
  const double m = static_cast<double>(errs.size());
  const double nobs = static_cast<double>(rep.observations);
  double ss = 0.0;
  for (double e : errs) {
    rep.level_mean += e;
    ss += e * e;
  }
  rep.level_mean /= m;
  rep.rmse = std::sqrt(ss / m);
  double dev = 0.0;
  for (double e : errs) {
    dev += (e - rep.level_mean) * (e - rep.level_mean);
  }
  rep.level_variance = errs.size() > 1 ? dev / (m - 1.0) : 0.0;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(l);
  for (auto z : rep.included) {
    w(z) = static_cast<double>(fit.level_counts[z]) / nobs;
    rep.obs_mean += w(z) * rep.error(z);
    rep.obs_mse += w(z) * rep.error(z) * rep.error(z);
  }
  for (auto z : rep.included) {
    const double d = rep.error(z) - rep.obs_mean;
    rep.obs_variance += w(z) * d * d;
  }
  if (fit.fe_cov) {
    rep.obs_mean_sem = std::sqrt(std::max(0.0, weighted_variance(*fit.fe_cov, w)));
    rep.sem_method = "model";
  } else {
    double v = 0.0;
    for (auto z : rep.included) {
      const double d = rep.error(z) - rep.obs_mean;
      v += w(z) * w(z) * d * d;
    }
    rep.obs_mean_sem = std::sqrt(v);
    rep.sem_method = "empirical";
  }
  rep.histogram = make_histogram(errs, options);
  return rep;
}

Ecdf::Ecdf(std::vector<double> values) : n_(values.size()) {
  if (values.empty()) {
    throw ValidationError("ECDF needs at least one value");
  }
  for (double v : values) {
    if (std::isnan(v)) {
      throw ValidationError("ECDF input contains NaN");
    }
  }
  std::sort(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 == values.size() || values[i + 1] != values[i]) {
      support_.push_back(values[i]);
      cumulative_.push_back(static_cast<double>(i + 1) / static_cast<double>(n_));
    }
  }
}

double Ecdf::operator()(double x) const {
  const auto it = std::upper_bound(support_.begin(), support_.end(), x);
  if (it == support_.begin()) {
    return 0.0;
  }
  return cumulative_[static_cast<std::size_t>(it - support_.begin()) - 1];
}

Ecdf ecdf(const std::vector<double>& values) { return Ecdf(values); }

PrecisionTest precision_consistency(const FitResult& fit, const Eigen::VectorXd& truth) {
  check_truth(fit, truth);
  if (fit.df <= 0) {
    throw NumericalError("fit has no residual degrees of freedom; precision is undefined");
  }
  if (!fit.fe_cov) {
    throw ValidationError("fit '" + fit.estimator + "' carries no fixed-effect covariance");
  }
  const auto& cov = *fit.fe_cov;
  const auto l = static_cast<Eigen::Index>(fit.num_levels());
  PrecisionTest pt;
  std::vector<Eigen::Index> use;
  for (Eigen::Index z = 0; z < l; ++z) {
    if (fit.fe_status[static_cast<std::size_t>(z)] == LevelStatus::estimated && fit.has_fe_se(static_cast<std::size_t>(z))) {
      use.push_back(z);
      pt.observations += fit.level_counts[static_cast<std::size_t>(z)];
    }
  }
  if (use.empty() || pt.observations == 0) {
    throw ValidationError("fit has no estimated levels with standard errors");
  }
  pt.levels = use.size();
  const double n = static_cast<double>(pt.observations);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(l);
  double se4 = 0.0;
  for (auto z : use) {
    w(z) = static_cast<double>(fit.level_counts[static_cast<std::size_t>(z)]) / n;
    const double e = fit.fe(z) - truth(z);
    const double se2 = fit.fe_se(z) * fit.fe_se(z);
    pt.observed_var += w(z) * e * e;
    pt.mean_se2 += w(z) * se2;
    se4 += w(z) * se2 * se2;
  }
  // tr((W Sigma)^2) with Sigma = D + A C A'.
  const Eigen::ArrayXd wd = w.array() * cov.diag.array();
  const Eigen::MatrixXd aw = cov.loading.transpose() * w.asDiagonal() * cov.loading;  // A' W A
  const Eigen::MatrixXd awdwa =
      cov.loading.transpose() * (w.array() * wd).matrix().asDiagonal() * cov.loading;  // A' W D W A
  const Eigen::MatrixXd cm = cov.core * aw;
  const double trace = wd.square().sum() + 2.0 * (cov.core * awdwa).trace() + (cm * cm).trace();
  pt.sem = std::sqrt(std::max(0.0, 2.0 * trace));
  pt.t = pt.sem > 0.0 ? (pt.mean_se2 - pt.observed_var) / pt.sem : 0.0;

  const double var_se2 = std::max(0.0, se4 - pt.mean_se2 * pt.mean_se2);
  pt.sem_iid = std::sqrt(var_se2 * n / std::max(1.0, n - 1.0)) / std::sqrt(n);
  pt.t_iid = pt.sem_iid > 0.0 ? (pt.mean_se2 - pt.observed_var) / pt.sem_iid : 0.0;
  return pt;
}

SignificanceResult significance_count(const FitResult& fit, double null, double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ValidationError("significance level must lie in (0, 1)");
  }
  SignificanceResult res;
  res.critical_value = boost::math::quantile(boost::math::normal(), 1.0 - level / 2.0);
  res.flags.assign(fit.num_levels(), false);
  for (std::size_t z = 0; z < fit.num_levels(); ++z) {
    if (fit.fe_status[z] != LevelStatus::estimated || !fit.has_fe_se(z)) {
      continue;
    }
    ++res.total;
    const auto idx = static_cast<Eigen::Index>(z);
    const double diff = std::abs(fit.fe(idx) - null);
    const double se = fit.fe_se(idx);
    const bool sig = se > 0.0 ? diff / se > res.critical_value : diff > 0.0;
    res.flags[z] = sig;
    res.significant += sig ? 1 : 0;
  }
  return res;
}

OverfitReport overfit_report(const FitResult& fit, const ObservationTable& data, double threshold) {
  if (static_cast<std::size_t>(fit.residuals.size()) != data.rows()) {
    throw ValidationError("fit residuals do not match the data rows");
  }
  OverfitReport rep;
  rep.threshold = threshold;
  rep.observations = data.rows();
  rep.parameters = fit.num_parameters;
  rep.parameter_ratio = static_cast<double>(rep.parameters) / static_cast<double>(std::max<std::size_t>(1, rep.observations));
  const double scale = std::max(1.0, data.y.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < fit.residuals.size(); ++i) {
    if (std::abs(fit.residuals(i)) <= 1e-10 * scale) {
      ++rep.zero_residuals;
    }
  }
  for (auto c : data.level_counts()) {
    rep.singleton_levels += c == 1 ? 1 : 0;
  }
  rep.r_squared = fit.r_squared();
  rep.adjusted_r_squared = fit.df > 0 ? fit.adjusted_r_squared() : std::numeric_limits<double>::quiet_NaN();
  rep.saturated = rep.parameter_ratio > threshold;
  return rep;
}

}  // namespace caviar
