#include "caviar/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "caviar/rng.hpp"

namespace caviar {
namespace {

double sample_sd(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

// Zip-like five-digit keys, ascending from east to west.
std::vector<std::string> zip_like_keys(const Eigen::VectorXd& longitude) {
  const auto L = static_cast<std::size_t>(longitude.size());
  std::vector<std::size_t> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return longitude(a) > longitude(b); });
  std::vector<std::string> keys(L);
  constexpr std::size_t lo = 1001, hi = 99950;
  const bool fits = L <= hi - lo;
  for (std::size_t rank = 0; rank < L; ++rank) {
    char buf[32];
    if (fits) {
      const std::size_t zip = lo + rank * (hi - lo) / std::max<std::size_t>(L, 1);
      std::snprintf(buf, sizeof(buf), "%05zu", zip);
    } else {
      std::snprintf(buf, sizeof(buf), "L%07zu", rank);
    }
    keys[order[rank]] = buf;
  }
  return keys;
}

}  // namespace

GeographyModel generate_geography(std::size_t num_levels, std::uint64_t seed, const GeographyParams& p) {
  if (num_levels < 2) {
    throw ValidationError("generate_geography needs at least 2 levels");
  }
  const auto L = static_cast<Eigen::Index>(num_levels);
  const Philox regime_rng(seed, Stream::population_regime);
  const Philox pop_rng(seed, Stream::population);
  const Philox lat_rng(seed, Stream::latitude);
  const Philox long_rng(seed, Stream::longitude);
  const Philox copula_rng(seed, Stream::elevation_copula);

  const boost::math::normal_distribution<double> std_normal;
  const boost::math::beta_distribution<double> lat_dist(p.lat_beta_a, p.lat_beta_b);
  const boost::math::beta_distribution<double> long_dist(p.long_beta_a, p.long_beta_b);
  const boost::math::gamma_distribution<double> ele_dist(p.ele_gamma_shape, p.ele_mean / p.ele_gamma_shape);
  const double rho = p.ele_lat_correlation;

  Eigen::VectorXd lat(L), lon(L), ele(L), pop(L);
  for (Eigen::Index i = 0; i < L; ++i) {
    const auto c = static_cast<std::uint64_t>(i);
    const bool rural = regime_rng.uniform(c) < p.rural_fraction;
    const double log_median = std::log(p.urban_median) + (rural ? p.rural_log_median : 0.0);
    const double log_sd = rural ? p.rural_log_sd : p.urban_log_sd;
    pop(i) = std::max(1.0, std::round(std::exp(log_median + log_sd * pop_rng.normal(c))));

    const double u_lat = lat_rng.uniform(c);
    lat(i) = p.lat_min + (p.lat_max - p.lat_min) * boost::math::quantile(lat_dist, u_lat);
    lon(i) = p.long_min + (p.long_max - p.long_min) * boost::math::quantile(long_dist, long_rng.uniform(c));

    const double z_lat = boost::math::quantile(std_normal, u_lat);
    const double z_ele = rho * z_lat + std::sqrt(1.0 - rho * rho) * copula_rng.normal(c);
    const double u_ele = std::clamp(boost::math::cdf(std_normal, z_ele), 1e-300, 1.0 - 1e-16);
    ele(i) = std::clamp(boost::math::quantile(ele_dist, u_ele), p.ele_min, p.ele_max);
  }

  // Pin the observed extremes so standardized ranges match the reference geography.
  const std::pair<Eigen::VectorXd*, double> pins[] = {
      {&lat, p.lat_max}, {&lat, p.lat_min}, {&lon, p.long_min}, {&lon, p.long_max},
      {&ele, p.ele_min}, {&ele, p.ele_max}};
  for (std::size_t k = 0; k < std::size(pins) && static_cast<Eigen::Index>(k) < L; ++k) {
    (*pins[k].first)(static_cast<Eigen::Index>(k)) = pins[k].second;
  }

  GeographyModel geo;
  for (const auto& key : zip_like_keys(lon)) {
    geo.levels.intern(key);
  }
  geo.attributes.column_names = {"latitude", "longitude", "elevation", "population"};
  geo.attributes.values.resize(L, 4);
  geo.attributes.values << lat, lon, ele, pop;
  geo.weights = pop / pop.sum();
  return geo;
}

GeographyModel geography_from_attributes(LevelRegistry levels, LevelAttributeTable attributes) {
  attributes.validate(levels.size());
  if (!attributes.has_column("population")) {
    throw ValidationError("geography needs a 'population' attribute column for sampling weights");
  }
  GeographyModel geo;
  geo.weights = attributes.column("population");
  const double total = geo.weights.sum();
  if (!(total > 0.0)) {
    throw ValidationError("total population must be positive");
  }
  geo.weights /= total;
  geo.levels = std::move(levels);
  geo.attributes = std::move(attributes);
  return geo;
}

Eigen::VectorXd standardize_feature(const Eigen::VectorXd& v, Direction direction) {
  if (v.size() < 2) {
    throw ValidationError("standardize_feature needs at least two values");
  }
  const double sd = sample_sd(v);
  if (!(sd > 0.0) || !std::isfinite(sd)) {
    throw ValidationError("cannot standardize a constant column (standard deviation is zero)");
  }
  if (direction == Direction::ascending) {
    return (v.array() - v.minCoeff()) / sd;
  }
  return (v.maxCoeff() - v.array()) / sd;
}

Eigen::VectorXd true_fixed_effects(const GeographyModel& geo, const DeltaSpec& delta) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(geo.size()));
  for (const auto& [name, d] : delta) {
    const auto col = geo.attributes.column(name);  // throws on unknown feature
    if (d == 0.0) {
      continue;
    }
    beta += std::abs(d) * standardize_feature(col, d < 0.0 ? Direction::descending : Direction::ascending);
  }
  return beta;
}

void SimConfig::validate() const {
  if (n < 1) {
    throw ValidationError("simulation needs n >= 1");
  }
  if (!(noise_sd >= 0.0)) {
    throw ValidationError("noise_sd must be non-negative");
  }
  if (!(price_low < price_high)) {
    throw ValidationError("price range must satisfy low < high");
  }
}

SimConfig sim1_config(std::size_t n, std::uint64_t seed) {
  SimConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return cfg;
}

SimConfig sim2_config(std::size_t n, std::uint64_t seed) {
  SimConfig cfg = sim1_config(n, seed);
  cfg.delta = {{"latitude", -1.0}, {"longitude", 0.0}, {"elevation", -1.0}};
  return cfg;
}

namespace {

std::vector<double> cumulative(const Eigen::VectorXd& weights) {
  std::vector<double> cdf(static_cast<std::size_t>(weights.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    acc += weights(i);
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  for (auto& c : cdf) {
    c /= acc;
  }
  cdf.back() = 1.0;
  return cdf;
}

LevelId draw_level(const std::vector<double>& cdf, double u) {
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) {
    --it;
  }
  return static_cast<LevelId>(it - cdf.begin());
}

template <class Fn>
void for_rows(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n / 4096, 1))));
  if (threads == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo < hi) {
      pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
  }
  for (auto& th : pool) {
    th.join();
  }
}

}  // namespace

Simulation simulate(const GeographyModel& geo, const SimConfig& cfg, unsigned threads) {
  cfg.validate();
  geo.attributes.validate(geo.size());

  Simulation sim;
  sim.truth = true_fixed_effects(geo, cfg.delta);
  const Eigen::VectorXd lat = geo.attributes.column("latitude");
  sim.lat_max = lat.maxCoeff();

  const auto cdf = cumulative(geo.weights);
  const Philox level_rng(cfg.seed, Stream::level_draw);
  const Philox price_rng(cfg.seed, Stream::price);
  const Philox noise_rng(cfg.seed, Stream::noise);

  auto& data = sim.data;
  data.outcome_name = "revenue";
  data.levels = geo.levels;
  data.covariate_names = {"price"};
  data.y.resize(static_cast<Eigen::Index>(cfg.n));
  data.x.resize(static_cast<Eigen::Index>(cfg.n), 1);
  data.level.resize(cfg.n);

  for_rows(cfg.n, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const LevelId z = draw_level(cdf, level_rng.uniform(i));
      const double price = cfg.price_low + (cfg.price_high - cfg.price_low) * price_rng.uniform(i) +
                           (sim.lat_max - lat(z));
      data.level[i] = z;
      data.x(row, 0) = price;
      data.y(row) = cfg.alpha + cfg.beta_price * price + sim.truth(z) + cfg.noise_sd * noise_rng.normal(i);
    }
  });
  return sim;
}

Simulation simulate_field(const GeographyModel& geo, const FieldConfig& cfg) {
  if (cfg.n < 1 || cfg.num_years < 1) {
    throw ValidationError("field simulation needs n >= 1 and at least one year");
  }
  geo.attributes.validate(geo.size());

  Simulation sim;
  sim.truth = cfg.fe_scale * true_fixed_effects(geo, cfg.delta);
  sim.lat_max = geo.attributes.column("latitude").maxCoeff();

  const auto cdf = cumulative(geo.weights);
  const Philox level_rng(cfg.seed, Stream::level_draw);
  const Philox coupon_rng(cfg.seed, Stream::covariate);
  const Philox factor_rng(cfg.seed, Stream::factor);
  const Philox noise_rng(cfg.seed, Stream::noise);

  // Later years carry more orders, mimicking a growing retailer.
  Eigen::VectorXd year_weights(static_cast<Eigen::Index>(cfg.num_years));
  for (Eigen::Index y = 0; y < year_weights.size(); ++y) {
    year_weights(y) = 1.0 + static_cast<double>(y);
  }
  const auto year_cdf = cumulative(year_weights);

  Factor month{"month", {}, {}};
  Factor year{"year", {}, {}};
  for (int m = 1; m <= 12; ++m) month.labels.push_back(std::to_string(m));
  for (std::size_t y = 0; y < cfg.num_years; ++y) year.labels.push_back(std::to_string(2000 + y));
  month.index.resize(cfg.n);
  year.index.resize(cfg.n);

  auto& data = sim.data;
  data.outcome_name = "revenue";
  data.levels = geo.levels;
  data.covariate_names = {"coupon"};
  data.y.resize(static_cast<Eigen::Index>(cfg.n));
  data.x.resize(static_cast<Eigen::Index>(cfg.n), 1);
  data.level.resize(cfg.n);

  const double mid_year = 0.5 * static_cast<double>(cfg.num_years - 1);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const LevelId z = draw_level(cdf, level_rng.uniform(i));
    const double coupon = coupon_rng.uniform(i) < cfg.coupon_rate ? 1.0 : 0.0;
    const auto m = static_cast<std::uint32_t>(std::min(11.0, std::floor(12.0 * factor_rng.uniform(i, 0))));
    const auto y = draw_level(year_cdf, factor_rng.uniform(i, 1));
    const double month_effect = cfg.month_effect_sd * std::sin(2.0 * 3.14159265358979323846 * m / 12.0);
    const double year_effect = cfg.year_effect_sd * (static_cast<double>(y) - mid_year) / std::max(1.0, mid_year);
    data.level[i] = z;
    data.x(row, 0) = coupon;
    month.index[i] = m;
    year.index[i] = y;
    data.y(row) = cfg.intercept + cfg.beta_coupon * coupon + sim.truth(z) + month_effect + year_effect +
                  cfg.noise_sd * noise_rng.normal(i);
  }
  data.factors = {std::move(month), std::move(year)};
  return sim;
}

}  // namespace caviar
