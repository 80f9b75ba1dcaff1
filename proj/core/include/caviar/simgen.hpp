#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "caviar/domain.hpp"

namespace caviar {

/**
 * Population model for synthetic geographies. Defaults were calibrated by
 * simulated search so that 100,000 population-weighted draws from 25,000
 * levels yield ~18,470 distinct levels with ~5,030 singletons and ~2,580
 * doubletons. Populations are a two-regime log-normal mixture: a "rural"
 * regime of many small levels and an "urban" regime carrying most of the mass.
 */
struct GeographyParams {
  double rural_fraction = 0.58251;
  double rural_log_sd = 0.45957;
  double rural_log_median = -2.25184;  // relative to the urban median
  double urban_log_sd = 0.43895;
  double urban_median = 20000.0;  // people

  double lat_min = 24.6, lat_max = 49.0;
  double lat_beta_a = 2.64, lat_beta_b = 2.36;
  double long_min = -124.5, long_max = -71.94;
  double long_beta_a = 2.2, long_beta_b = 1.6;
  double ele_min = -858.0, ele_max = 3870.0;
  double ele_gamma_shape = 0.45;
  double ele_mean = 250.0;
  double ele_lat_correlation = 0.2;
};

/// Level attribute table (latitude, longitude, elevation, population) plus sampling weights.
struct GeographyModel {
  LevelRegistry levels;
  LevelAttributeTable attributes;
  Eigen::VectorXd weights;  // sums to 1, proportional to population

  std::size_t size() const { return levels.size(); }
};

inline constexpr std::size_t kDefaultSimLevels = 25000;

GeographyModel generate_geography(std::size_t num_levels, std::uint64_t seed, const GeographyParams& params = {});

/// Wraps loaded attributes; weights are proportional to the "population" column.
GeographyModel geography_from_attributes(LevelRegistry levels, LevelAttributeTable attributes);

enum class Direction { ascending, descending };

/// (v - min) / sd, or (max - v) / sd when descending. sd uses the n-1 denominator.
Eigen::VectorXd standardize_feature(const Eigen::VectorXd& v, Direction direction = Direction::ascending);

/// Named coefficients on standardized manifold features, e.g. {"latitude", -1}.
using DeltaSpec = std::vector<std::pair<std::string, double>>;

/// beta_z = sum_f |delta_f| * s_f(z), descending standardization for negative delta_f.
Eigen::VectorXd true_fixed_effects(const GeographyModel& geo, const DeltaSpec& delta);

struct SimConfig {
  std::size_t n = 100000;
  std::uint64_t seed = 7;
  DeltaSpec delta = {{"latitude", -1.0}, {"longitude", 0.0}};
  double beta_price = -1.0;
  double price_low = 0.0;
  double price_high = 10.0;
  double alpha = 0.0;
  double noise_sd = 1.0;

  void validate() const;
};

SimConfig sim1_config(std::size_t n = 100000, std::uint64_t seed = 7);
SimConfig sim2_config(std::size_t n = 100000, std::uint64_t seed = 7);

struct Simulation {
  ObservationTable data;
  Eigen::VectorXd truth;    // per registered level
  double lat_max = 0.0;     // max latitude over eligible levels, used for price endogeneity
};

/// Cross-sectional draw: one row per consumer, deterministic given the seed.
Simulation simulate(const GeographyModel& geo, const SimConfig& cfg, unsigned threads = 1);

/// Field-application analogue: coupon covariate, month/year factors, revenue outcome.
struct FieldConfig {
  std::size_t n = 100000;
  std::uint64_t seed = 11;
  double intercept = 36.0;
  double beta_coupon = -20.0;
  double coupon_rate = 0.084;
  double noise_sd = 34.0;
  DeltaSpec delta = {{"latitude", -0.35}, {"longitude", -0.35}, {"elevation", -0.1}};
  double fe_scale = 1.0;
  std::size_t num_years = 8;
  double month_effect_sd = 1.0;
  double year_effect_sd = 1.5;
};

Simulation simulate_field(const GeographyModel& geo, const FieldConfig& cfg);

}  // namespace caviar
