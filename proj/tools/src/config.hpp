#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include <caviar/domain.hpp>

namespace caviar::cli {

/// Bad configuration: unknown key, wrong type, out-of-range value.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct DataSection {
  std::string observations;
  std::string attributes;
  std::string truth;
  std::string embedding;
  std::string fit;
  std::string outcome;
  std::vector<std::string> covariates;
  std::string level;
  std::vector<std::string> factors;
  std::string attribute_key;
  std::string text_column;
  int zip_digits = 0;  // 0 keeps keys whole
};

struct SimulateSection {
  std::string kind;  // "sim" or "field"
  std::size_t n = 0;
  std::size_t levels = 0;
  std::vector<std::pair<std::string, double>> delta;
  double beta_price = 0.0;
  double price_low = 0.0;
  double price_high = 0.0;
  double alpha = 0.0;
  double noise_sd = 0.0;
  double beta_coupon = 0.0;
  double coupon_rate = 0.0;
  std::size_t years = 0;
  double fe_scale = 1.0;
};

struct EmbedSection {
  std::vector<std::string> features;
  bool standardize = true;
  std::string reduction;  // "pca" or "truncate"
  std::size_t dims = 0;
  std::string encoder;    // "none", "mock" or "http"
  std::size_t text_dims = 0;
  std::string model;
  std::string endpoint;
  long timeout_ms = 0;
  std::size_t max_batch = 0;
  int max_attempts = 0;
  long backoff_ms = 0;
  std::string api_key_env;
  std::string schema;
  std::size_t mock_dim = 0;
  std::string cache;
  std::size_t max_in_flight = 1;
};

struct FitSection {
  std::string estimator;  // ols-absorbed, ols-dense, merged, lasso, caviar
  std::size_t merge_threshold = 3;
  std::size_t folds = 10;
  std::string lambda_rule;  // "1se" or "min"
  std::size_t num_lambda = 100;
  double lambda_min_ratio = 1e-4;
  double tolerance = 1e-7;
};

struct ReportSection {
  std::size_t bins = 50;
  double width_sds = 4.0;
  double significance_level = 0.05;
  bool svg = true;
};

struct RunConfig {
  std::string preset;
  std::uint64_t seed = 7;
  unsigned threads = 1;
  std::filesystem::path run_dir;
  DataSection data;
  SimulateSection simulate;
  EmbedSection embed;
  FitSection fit;
  ReportSection report;

  nlohmann::json resolved;  // full document after defaults and overrides
};

std::vector<std::string> preset_names();

/// Every key with its default value under the named preset.
nlohmann::json preset_defaults(std::string_view preset);

/**
 * Layers `file` and then `overrides` over the defaults of the chosen preset
 * (overrides' "preset", else file's, else "sim1"). Keys absent from the defaults
 * and values whose type differs from the default are rejected with their path.
 */
RunConfig resolve_config(const nlohmann::json& file, const nlohmann::json& overrides = nlohmann::json::object());

RunConfig load_config(const std::filesystem::path& path, const nlohmann::json& overrides = nlohmann::json::object());

/// Sets a dotted path ("fit.estimator") in `patch`, creating objects on the way.
void set_path(nlohmann::json& patch, std::string_view dotted, nlohmann::json value);

}  // namespace caviar::cli
