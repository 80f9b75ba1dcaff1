#pragma once

#include <random>
#include <string>

#include <caviar/domain.hpp>
#include <caviar/simgen.hpp>

namespace caviar::testing {

/// Random table with n rows over L registered levels, k covariates, and optional factors.
/// Every level is observed at least twice unless `allow_absent`.
inline ObservationTable random_table(std::mt19937_64& rng, std::size_t n, std::size_t levels, std::size_t k,
                                     bool allow_absent = false, std::size_t factor_labels = 0) {
  ObservationTable t;
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> pick(0, levels - 1);
  for (std::size_t z = 0; z < levels; ++z) {
    t.levels.intern("L" + std::to_string(z));
  }
  Eigen::VectorXd effect(static_cast<Eigen::Index>(levels));
  for (auto& e : effect) {
    e = 2.0 * normal(rng);
  }
  t.level.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t reserved = allow_absent ? 0 : 2 * levels;
    t.level[i] = static_cast<LevelId>(i < reserved ? i / 2 : pick(rng));
  }
  if (allow_absent) {
    // Keep the last level unobserved.
    for (auto& l : t.level) {
      if (l + 1 == levels && levels > 1) {
        l = 0;
      }
    }
  }
  std::shuffle(t.level.begin(), t.level.end(), rng);
  t.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) {
    t.covariate_names.push_back("x" + std::to_string(c));
  }
  t.y.resize(static_cast<Eigen::Index>(n));
  if (factor_labels > 1) {
    Factor f{"season", {}, {}};
    for (std::size_t s = 0; s < factor_labels; ++s) {
      f.labels.push_back("s" + std::to_string(s));
    }
    std::uniform_int_distribution<std::uint32_t> lab(0, static_cast<std::uint32_t>(factor_labels - 1));
    for (std::size_t i = 0; i < n; ++i) {
      f.index.push_back(lab(rng));
    }
    t.factors.push_back(std::move(f));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    double v = effect(t.level[i]);
    for (std::size_t c = 0; c < k; ++c) {
      // Covariates correlated with the level effect, as with endogenous prices.
      const double x = normal(rng) + 0.5 * effect(t.level[i]);
      t.x(r, static_cast<Eigen::Index>(c)) = x;
      v += (static_cast<double>(c) - 1.0) * x;
    }
    if (!t.factors.empty()) {
      v += 0.3 * t.factors[0].index[i];
    }
    t.y(r) = v + normal(rng);
  }
  return t;
}

}  // namespace caviar::testing
