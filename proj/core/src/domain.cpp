#include "caviar/domain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace caviar {

LevelId LevelRegistry::intern(std::string_view key) {
  if (key.empty()) {
    throw ValidationError("level key must be a non-empty string");
  }
  if (auto it = index_.find(key); it != index_.end()) {
    return it->second;
  }
  if (keys_.size() >= std::numeric_limits<LevelId>::max()) {
    throw ValidationError("too many levels");
  }
  const auto id = static_cast<LevelId>(keys_.size());
  keys_.emplace_back(key);
  index_.emplace(keys_.back(), id);
  return id;
}

std::optional<LevelId> LevelRegistry::find(std::string_view key) const {
  if (auto it = index_.find(key); it != index_.end()) {
    return it->second;
  }
  return std::nullopt;
}

std::vector<LevelId> register_levels(std::span<const std::string> keys, LevelRegistry& registry) {
  // Validate first so a bad key leaves the registry untouched.
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) {
      throw ValidationError("empty level key at position " + std::to_string(i));
    }
  }
  std::vector<LevelId> out;
  out.reserve(keys.size());
  for (const auto& k : keys) {
    out.push_back(registry.intern(k));
  }
  return out;
}

void ObservationTable::validate() const {
  const auto n = rows();
  if (n == 0) {
    throw ValidationError("observation table is empty");
  }
  if (static_cast<std::size_t>(x.rows()) != n && x.cols() > 0) {
    throw ValidationError("covariate matrix has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(n));
  }
  if (static_cast<std::size_t>(x.cols()) != covariate_names.size()) {
    throw ValidationError("covariate names do not match covariate columns");
  }
  if (level.size() != n) {
    throw ValidationError("level column has " + std::to_string(level.size()) + " rows, expected " +
                          std::to_string(n));
  }
  if (!y.allFinite()) {
    throw ValidationError("outcome contains non-finite values");
  }
  if (x.size() > 0 && !x.allFinite()) {
    throw ValidationError("covariates contain non-finite values");
  }
  const auto L = levels.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (level[i] >= L) {
      throw ValidationError("level index " + std::to_string(level[i]) + " at row " + std::to_string(i) +
                            " is outside the registry (L=" + std::to_string(L) + ")");
    }
  }
  for (const auto& f : factors) {
    if (f.index.size() != n) {
      throw ValidationError("factor '" + f.name + "' has wrong length");
    }
    for (auto v : f.index) {
      if (v >= f.labels.size()) {
        throw ValidationError("factor '" + f.name + "' has an index outside its labels");
      }
    }
  }
}

std::vector<std::size_t> ObservationTable::level_counts() const {
  std::vector<std::size_t> counts(levels.size(), 0);
  for (auto l : level) {
    ++counts.at(l);
  }
  return counts;
}

bool LevelAttributeTable::has_column(std::string_view name) const {
  return std::find(column_names.begin(), column_names.end(), name) != column_names.end();
}

Eigen::Index LevelAttributeTable::column_index(std::string_view name) const {
  auto it = std::find(column_names.begin(), column_names.end(), name);
  if (it == column_names.end()) {
    throw ValidationError("unknown attribute column '" + std::string(name) + "'");
  }
  return static_cast<Eigen::Index>(it - column_names.begin());
}

void LevelAttributeTable::validate(std::size_t num_levels) const {
  if (rows() != num_levels) {
    throw ValidationError("attribute table has " + std::to_string(rows()) + " rows for " +
                          std::to_string(num_levels) + " levels");
  }
  if (static_cast<std::size_t>(values.cols()) != column_names.size()) {
    throw ValidationError("attribute column names do not match the value matrix");
  }
  if (!text.empty() && text.size() != num_levels) {
    throw ValidationError("attribute text column has the wrong length");
  }
  if (values.size() > 0 && !values.allFinite()) {
    throw ValidationError("attribute table contains non-finite values");
  }
  if (has_column("population") && (column("population").array() < 0.0).any()) {
    throw ValidationError("population must be non-negative");
  }
}

FrequencyTable frequency_table(std::span<const LevelId> level) {
  std::unordered_map<LevelId, std::size_t> counts;
  for (auto l : level) {
    ++counts[l];
  }
  FrequencyTable table;
  for (const auto& [id, c] : counts) {
    ++table[c];
  }
  return table;
}

std::string_view to_string(LevelStatus status) {
  switch (status) {
    case LevelStatus::estimated: return "estimated";
    case LevelStatus::extrapolated: return "extrapolated";
    case LevelStatus::pooled: return "pooled";
    case LevelStatus::merged: return "merged";
    case LevelStatus::absent: return "absent";
  }
  return "absent";
}

LevelStatus level_status_from_string(std::string_view text) {
  for (auto s : {LevelStatus::estimated, LevelStatus::extrapolated, LevelStatus::pooled,
                 LevelStatus::merged, LevelStatus::absent}) {
    if (to_string(s) == text) {
      return s;
    }
  }
  throw ValidationError("unknown level status '" + std::string(text) + "'");
}

double FeCovariance::variance(Eigen::Index level) const { return covariance(level, level); }

double FeCovariance::covariance(Eigen::Index a, Eigen::Index b) const {
  double v = (a == b) ? diag(a) : 0.0;
  if (core.size() > 0) {
    v += loading.row(a).dot(core * loading.row(b).transpose());
  }
  return v;
}

bool FitResult::has_fe_se(std::size_t level) const {
  return level < static_cast<std::size_t>(fe_se.size()) && std::isfinite(fe_se(static_cast<Eigen::Index>(level)));
}

double FitResult::r_squared() const { return tss > 0.0 ? 1.0 - rss / tss : 0.0; }

double FitResult::adjusted_r_squared() const {
  if (df <= 0 || num_observations < 2) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double n = static_cast<double>(num_observations);
  return 1.0 - (1.0 - r_squared()) * (n - 1.0) / static_cast<double>(df);
}

}  // namespace caviar
