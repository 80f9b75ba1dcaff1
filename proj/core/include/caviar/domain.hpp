#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace caviar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad keys, inconsistent lengths, non-finite values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: rank deficiency, exhausted degrees of freedom, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

using LevelId = std::uint32_t;

/**
 * Insertion-ordered mapping between opaque level keys (zip codes, brands, ...)
 * and dense indices 0..L-1.
 *
 * Appending is single-writer. Indices never move once assigned, so a reader
 * holding index i < size() always sees the same key.
 */
class LevelRegistry {
 public:
  LevelRegistry() = default;

  /// Returns the index of `key`, appending it if unseen. Empty keys are rejected.
  LevelId intern(std::string_view key);

  std::optional<LevelId> find(std::string_view key) const;
  const std::string& key(LevelId index) const { return keys_.at(index); }
  const std::vector<std::string>& keys() const { return keys_; }
  std::size_t size() const { return keys_.size(); }
  bool empty() const { return keys_.empty(); }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> keys_;
  std::unordered_map<std::string, LevelId, StringHash, std::equal_to<>> index_;
};

/// Registers every key (in order of first appearance) and returns one index per key.
std::vector<LevelId> register_levels(std::span<const std::string> keys, LevelRegistry& registry);

/// Low-cardinality categorical column (month, year, ...). Level 0 is the reference.
struct Factor {
  std::string name;
  std::vector<std::string> labels;
  std::vector<std::uint32_t> index;
};

/// n observations of an outcome, dense covariates and one high-cardinality level.
struct ObservationTable {
  std::string outcome_name = "y";
  Eigen::VectorXd y;
  Eigen::MatrixXd x;  // n x k
  std::vector<std::string> covariate_names;
  std::vector<LevelId> level;
  LevelRegistry levels;
  std::vector<Factor> factors;

  std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
  std::size_t num_levels() const { return levels.size(); }

  /// Throws ValidationError if any invariant of the table is broken.
  void validate() const;

  /// Observation count per registered level (length L).
  std::vector<std::size_t> level_counts() const;
};

/// Per-level structured features plus an optional free-text description.
struct LevelAttributeTable {
  std::vector<std::string> column_names;
  Eigen::MatrixXd values;         // L x C
  std::vector<std::string> text;  // empty, or one entry per level

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  bool has_column(std::string_view name) const;
  Eigen::Index column_index(std::string_view name) const;
  Eigen::VectorXd column(std::string_view name) const { return values.col(column_index(name)); }

  void validate(std::size_t num_levels) const;
};

/// Maps observation frequency -> number of levels observed that many times.
using FrequencyTable = std::map<std::size_t, std::size_t>;

FrequencyTable frequency_table(std::span<const LevelId> level);

enum class LevelStatus : std::uint8_t {
  estimated,     // estimated from its own observations
  extrapolated,  // no observations; value implied by a projection (CAVIAR)
  pooled,        // observed, but its own coefficient was shrunk to zero (LASSO)
  merged,        // observed, folded into the reference group
  absent,        // registered, never observed: no estimate
};

std::string_view to_string(LevelStatus status);
LevelStatus level_status_from_string(std::string_view text);

/**
 * Structured covariance of the fixed-effect estimates:
 *   Cov(fe) = diag(diag) + loading * core * loading^T.
 * The low-rank part carries the dependence induced by the shared coefficients.
 */
struct FeCovariance {
  Eigen::VectorXd diag;     // length L
  Eigen::MatrixXd loading;  // L x q
  Eigen::MatrixXd core;     // q x q

  double variance(Eigen::Index level) const;
  double covariance(Eigen::Index a, Eigen::Index b) const;
};

struct FitResult {
  std::string estimator;
  std::map<std::string, std::string> settings;
  std::vector<std::string> warnings;

  bool has_intercept = false;
  double alpha = 0.0;
  std::vector<std::string> coef_names;
  Eigen::VectorXd coef;
  /// Covariance of (alpha, coef) when has_intercept, otherwise of coef.
  Eigen::MatrixXd cov;

  double sigma2 = 0.0;
  long long df = 0;
  std::size_t num_parameters = 0;
  std::size_t num_observations = 0;
  double rss = 0.0;
  double tss = 0.0;

  Eigen::VectorXd fe;
  Eigen::VectorXd fe_se;  // NaN where the status carries no standard error
  std::vector<LevelStatus> fe_status;
  std::vector<std::size_t> level_counts;
  std::optional<FeCovariance> fe_cov;

  Eigen::VectorXd residuals;

  std::size_t num_levels() const { return fe_status.size(); }
  bool has_fe_se(std::size_t level) const;
  double r_squared() const;
  double adjusted_r_squared() const;
};

}  // namespace caviar
