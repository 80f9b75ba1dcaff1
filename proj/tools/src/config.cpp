#include "config.hpp"

#include <algorithm>
#include <fstream>

namespace caviar::cli {

using nlohmann::json;

namespace {

json base_defaults() {
  return json{
      {"preset", "sim1"},
      {"seed", 7u},
      {"threads", 1u},
      {"run_dir", "run"},
      {"data",
       {{"observations", ""},
        {"attributes", ""},
        {"truth", ""},
        {"embedding", ""},
        {"fit", ""},
        {"outcome", "revenue"},
        {"covariates", json::array({"price"})},
        {"level", "level"},
        {"factors", json::array()},
        {"attribute_key", "level"},
        {"text_column", ""},
        {"zip_digits", 0u}}},
      {"simulate",
       {{"kind", "sim"},
        {"n", 100000u},
        {"levels", 25000u},
        {"delta", {{"latitude", -1.0}, {"longitude", 0.0}}},
        {"beta_price", -1.0},
        {"price_low", 0.0},
        {"price_high", 10.0},
        {"alpha", 0.0},
        {"noise_sd", 1.0},
        {"beta_coupon", -20.0},
        {"coupon_rate", 0.084},
        {"years", 8u},
        {"fe_scale", 1.0}}},
      {"embed",
       {{"features", json::array({"-latitude", "-longitude"})},
        {"standardize", true},
        {"reduction", "pca"},
        {"dims", 2u},
        {"encoder", "none"},
        {"text_dims", 0u},
        {"model", "text-embedding-3-large"},
        {"endpoint", "https://api.openai.com/v1/embeddings"},
        {"timeout_ms", 30000u},
        {"max_batch", 64u},
        {"max_attempts", 3u},
        {"backoff_ms", 200u},
        {"api_key_env", "CAVIAR_ENCODER_API_KEY"},
        {"schema", "openai"},
        {"mock_dim", 256u},
        {"cache", ""},
        {"max_in_flight", 1u}}},
      {"fit",
       {{"estimator", "ols-absorbed"},
        {"merge_threshold", 3u},
        {"folds", 10u},
        {"lambda_rule", "1se"},
        {"num_lambda", 100u},
        {"lambda_min_ratio", 1e-4},
        {"tolerance", 1e-7}}},
      {"report", {{"bins", 50u}, {"width_sds", 4.0}, {"significance_level", 0.05}, {"svg", true}}},
  };
}

bool is_free_form(const std::string& path) { return path == "simulate.delta"; }

std::string type_name(const json& v) {
  if (v.is_number_unsigned()) return "nonnegative integer";
  if (v.is_number()) return "number";
  if (v.is_array()) return "array of strings";
  return v.type_name();
}

bool same_type(const json& def, const json& v) {
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number_float()) return v.is_number();
  if (def.is_array()) {
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  return def.type() == v.type();
}

void check_against(const json& defaults, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config " + (prefix.empty() ? std::string("document") : "'" + prefix + "'") +
                      " must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    const auto& def = defaults.at(key);
    if (is_free_form(path)) {
      if (!value.is_object()) {
        throw ConfigError("config '" + path + "' must be an object of numbers");
      }
      for (const auto& [name, coef] : value.items()) {
        if (!coef.is_number()) {
          throw ConfigError("config '" + path + "." + name + "' must be a number");
        }
      }
    } else if (def.is_object()) {
      check_against(def, value, path);
    } else if (!same_type(def, value)) {
      throw ConfigError("config '" + path + "' must be a " + type_name(def) + ", got " + value.dump());
    }
  }
}

void overlay(json& target, const json& patch, const std::string& prefix) {
  for (const auto& [key, value] : patch.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object() && !is_free_form(path)) {
      overlay(target[key], value, path);
    } else {
      target[key] = value;
    }
  }
}

std::vector<std::string> strings(const json& a) { return a.get<std::vector<std::string>>(); }

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw ConfigError(what);
  }
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

std::vector<std::string> preset_names() { return {"sim1", "sim2", "field"}; }

json preset_defaults(std::string_view preset) {
  auto d = base_defaults();
  d["preset"] = std::string(preset);
  if (preset == "sim1") {
    d["embed"]["reduction"] = "truncate";
  } else if (preset == "sim2") {
    d["simulate"]["delta"] = {{"latitude", -1.0}, {"longitude", 0.0}, {"elevation", -1.0}};
    d["embed"]["features"] = {"-latitude", "-longitude", "-elevation"};
    d["embed"]["reduction"] = "truncate";
    d["embed"]["dims"] = 3u;
  } else if (preset == "field") {
    d["seed"] = 11u;
    d["simulate"]["kind"] = "field";
    d["simulate"]["delta"] = {{"latitude", -0.35}, {"longitude", -0.35}, {"elevation", -0.1}};
    d["simulate"]["alpha"] = 36.0;
    d["simulate"]["noise_sd"] = 34.0;
    d["data"]["covariates"] = {"coupon"};
    d["data"]["factors"] = {"month", "year"};
    d["embed"]["features"] = {"-latitude", "-longitude", "-elevation"};
    d["embed"]["dims"] = 3u;
  } else {
    throw ConfigError("unknown preset '" + std::string(preset) + "' (expected sim1, sim2 or field)");
  }
  return d;
}

void set_path(json& patch, std::string_view dotted, json value) {
  json* node = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig resolve_config(const json& file, const json& overrides) {
  std::string preset = "sim1";
  for (const json* src : {&file, &overrides}) {
    if (src->is_object() && src->contains("preset")) {
      require(src->at("preset").is_string(), "config 'preset' must be a string");
      preset = src->at("preset").get<std::string>();
    }
  }
  const auto defaults = preset_defaults(preset);
  auto doc = defaults;
  for (const json* src : {&file, &overrides}) {
    check_against(defaults, *src, "");
    overlay(doc, *src, "");
  }

  RunConfig c;
  c.preset = preset;
  c.seed = doc["seed"].get<std::uint64_t>();
  c.threads = doc["threads"].get<unsigned>();
  c.run_dir = doc["run_dir"].get<std::string>();

  const auto& d = doc["data"];
  c.data.observations = d["observations"];
  c.data.attributes = d["attributes"];
  c.data.truth = d["truth"];
  c.data.embedding = d["embedding"];
  c.data.fit = d["fit"];
  c.data.outcome = d["outcome"];
  c.data.covariates = strings(d["covariates"]);
  c.data.level = d["level"];
  c.data.factors = strings(d["factors"]);
  c.data.attribute_key = d["attribute_key"];
  c.data.text_column = d["text_column"];
  c.data.zip_digits = d["zip_digits"].get<int>();

  const auto& s = doc["simulate"];
  c.simulate.kind = s["kind"];
  c.simulate.n = s["n"];
  c.simulate.levels = s["levels"];
  for (const auto& [name, coef] : s["delta"].items()) {
    c.simulate.delta.emplace_back(name, coef.get<double>());
  }
  c.simulate.beta_price = s["beta_price"];
  c.simulate.price_low = s["price_low"];
  c.simulate.price_high = s["price_high"];
  c.simulate.alpha = s["alpha"];
  c.simulate.noise_sd = s["noise_sd"];
  c.simulate.beta_coupon = s["beta_coupon"];
  c.simulate.coupon_rate = s["coupon_rate"];
  c.simulate.years = s["years"];
  c.simulate.fe_scale = s["fe_scale"];

  const auto& e = doc["embed"];
  c.embed.features = strings(e["features"]);
  c.embed.standardize = e["standardize"];
  c.embed.reduction = e["reduction"];
  c.embed.dims = e["dims"];
  c.embed.encoder = e["encoder"];
  c.embed.text_dims = e["text_dims"];
  c.embed.model = e["model"];
  c.embed.endpoint = e["endpoint"];
  c.embed.timeout_ms = e["timeout_ms"];
  c.embed.max_batch = e["max_batch"];
  c.embed.max_attempts = e["max_attempts"];
  c.embed.backoff_ms = e["backoff_ms"];
  c.embed.api_key_env = e["api_key_env"];
  c.embed.schema = e["schema"];
  c.embed.mock_dim = e["mock_dim"];
  c.embed.cache = e["cache"];
  c.embed.max_in_flight = e["max_in_flight"];

  const auto& f = doc["fit"];
  c.fit.estimator = f["estimator"];
  c.fit.merge_threshold = f["merge_threshold"];
  c.fit.folds = f["folds"];
  c.fit.lambda_rule = f["lambda_rule"];
  c.fit.num_lambda = f["num_lambda"];
  c.fit.lambda_min_ratio = f["lambda_min_ratio"];
  c.fit.tolerance = f["tolerance"];

  const auto& r = doc["report"];
  c.report.bins = r["bins"];
  c.report.width_sds = r["width_sds"];
  c.report.significance_level = r["significance_level"];
  c.report.svg = r["svg"];

  require(c.threads >= 1, "threads must be at least 1");
  require(!c.run_dir.empty(), "run_dir must not be empty");
  require(one_of(std::to_string(c.data.zip_digits), {"0", "1", "2", "3", "5"}), "data.zip_digits must be 0, 1, 2, 3 or 5");
  require(one_of(c.simulate.kind, {"sim", "field"}), "simulate.kind must be 'sim' or 'field'");
  require(c.simulate.n >= 1, "simulate.n must be at least 1");
  require(c.simulate.levels >= 2, "simulate.levels must be at least 2");
  require(c.simulate.noise_sd >= 0.0, "simulate.noise_sd must be nonnegative");
  require(c.simulate.price_low < c.simulate.price_high, "simulate.price_low must be below simulate.price_high");
  require(c.simulate.coupon_rate >= 0.0 && c.simulate.coupon_rate <= 1.0, "simulate.coupon_rate must lie in [0, 1]");
  require(c.simulate.years >= 1, "simulate.years must be at least 1");
  require(one_of(c.embed.reduction, {"pca", "truncate"}), "embed.reduction must be 'pca' or 'truncate'");
  require(c.embed.dims >= 1, "embed.dims must be at least 1");
  require(one_of(c.embed.encoder, {"none", "mock", "http"}), "embed.encoder must be 'none', 'mock' or 'http'");
  require(one_of(c.embed.schema, {"openai", "plain"}), "embed.schema must be 'openai' or 'plain'");
  require(c.embed.max_batch >= 1 && c.embed.max_attempts >= 1 && c.embed.max_in_flight >= 1 && c.embed.mock_dim >= 1,
          "embed.max_batch, max_attempts, max_in_flight and mock_dim must be at least 1");
  require(one_of(c.fit.estimator, {"ols-absorbed", "ols-dense", "merged", "lasso", "caviar"}),
          "fit.estimator must be one of ols-absorbed, ols-dense, merged, lasso, caviar");
  require(c.fit.merge_threshold >= 1, "fit.merge_threshold must be at least 1");
  require(c.fit.folds >= 2, "fit.folds must be at least 2");
  require(one_of(c.fit.lambda_rule, {"1se", "min"}), "fit.lambda_rule must be '1se' or 'min'");
  require(c.fit.num_lambda >= 2, "fit.num_lambda must be at least 2");
  require(c.fit.lambda_min_ratio > 0.0 && c.fit.lambda_min_ratio < 1.0, "fit.lambda_min_ratio must lie in (0, 1)");
  require(c.fit.tolerance > 0.0, "fit.tolerance must be positive");
  require(c.report.bins >= 1, "report.bins must be at least 1");
  require(c.report.width_sds > 0.0, "report.width_sds must be positive");
  require(c.report.significance_level > 0.0 && c.report.significance_level < 1.0,
          "report.significance_level must lie in (0, 1)");

  c.resolved = std::move(doc);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const json& overrides) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path.string());
  }
  json file;
  try {
    file = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return resolve_config(file, overrides);
}

}  // namespace caviar::cli
