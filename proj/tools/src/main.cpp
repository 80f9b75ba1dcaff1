#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "config.hpp"

namespace {

using caviar::cli::RunConfig;
using nlohmann::json;

/// Optional flags that, when given, override one config path.
class Overrides {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& flag, const std::string& path, const std::string& help) {
    auto value = std::make_shared<std::optional<T>>();
    app->add_option(flag, *value, help + " [" + path + "]");
    setters_.push_back([value, path](json& patch) {
      if (value->has_value()) {
        caviar::cli::set_path(patch, path, json(**value));
      }
    });
  }

  void add_flag(CLI::App* app, const std::string& flag, const std::string& path, bool when_set,
                const std::string& help) {
    auto value = std::make_shared<bool>(false);
    app->add_flag(flag, *value, help + " [" + path + "]");
    setters_.push_back([value, path, when_set](json& patch) {
      if (*value) {
        caviar::cli::set_path(patch, path, json(when_set));
      }
    });
  }

  json patch() const {
    json p = json::object();
    for (const auto& s : setters_) {
      s(p);
    }
    return p;
  }

 private:
  std::vector<std::function<void(json&)>> setters_;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool print_config = false;
};

void add_common(CLI::App* app, Common& common, Overrides& o) {
  app->add_option("-c,--config", common.config, "RunConfig JSON file (defaults apply to missing keys)");
  app->add_option("--set", common.sets, "Override any config key: path=value, value parsed as JSON or taken as text");
  app->add_flag("--print-config", common.print_config, "Print the resolved config and exit");
  o.add<std::string>(app, "--preset", "preset", "Preset: sim1, sim2 or field");
  o.add<std::uint64_t>(app, "--seed", "seed", "Random seed");
  o.add<unsigned>(app, "--threads", "threads", "Worker cap; results do not depend on it");
  o.add<std::string>(app, "-o,--run-dir", "run_dir", "Output directory");
  o.add<unsigned>(app, "--zip-digits", "data.zip_digits", "Truncate level keys to 1, 2, 3 or 5 leading characters");
  o.add_flag(app, "--no-svg", "report.svg", false, "Skip SVG output");
}

json parse_sets(const std::vector<std::string>& sets) {
  json patch = json::object();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw caviar::cli::ConfigError("--set expects path=value, got '" + s + "'");
    }
    const auto raw = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    caviar::cli::set_path(patch, s.substr(0, eq), value);
  }
  return patch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-effects estimation for high-cardinality categorical variables"};
  app.require_subcommand(1);

  using Command = std::function<int(RunConfig, caviar::cli::Streams)>;
  struct Sub {
    CLI::App* app;
    Command run;
    Common common;
    Overrides overrides;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  const auto add_sub = [&](const std::string& name, const std::string& help, Command run) -> Sub& {
    auto s = std::make_unique<Sub>();
    s->app = app.add_subcommand(name, help);
    s->run = std::move(run);
    add_common(s->app, s->common, s->overrides);
    subs.push_back(std::move(s));
    return *subs.back();
  };

  auto& simulate = add_sub("simulate", "Generate a synthetic dataset: observations, attributes, truth",
                           caviar::cli::cmd_simulate);
  simulate.overrides.add<std::size_t>(simulate.app, "-n,--n", "simulate.n", "Observations");
  simulate.overrides.add<std::size_t>(simulate.app, "--levels", "simulate.levels", "Generated levels");
  simulate.overrides.add<double>(simulate.app, "--noise-sd", "simulate.noise_sd", "Noise standard deviation");

  auto& embed = add_sub("embed", "Build level coordinates from attributes and optional text", caviar::cli::cmd_embed);
  embed.overrides.add<std::string>(embed.app, "--attributes", "data.attributes", "Attribute CSV");
  embed.overrides.add<std::vector<std::string>>(embed.app, "--features", "embed.features",
                                                "Attribute columns; a leading '-' standardizes descending");
  embed.overrides.add<std::size_t>(embed.app, "-J,--dims", "embed.dims", "Coordinates to keep");
  embed.overrides.add<std::string>(embed.app, "--reduction", "embed.reduction", "pca or truncate");
  embed.overrides.add<std::string>(embed.app, "--encoder", "embed.encoder", "none, mock or http");
  embed.overrides.add<std::size_t>(embed.app, "--text-dims", "embed.text_dims", "Leading text dimensions (0: all)");
  embed.overrides.add<std::string>(embed.app, "--cache", "embed.cache", "Embedding cache file");
  embed.overrides.add<std::size_t>(embed.app, "--mock-dim", "embed.mock_dim", "Mock encoder dimension");

  auto& fit = add_sub("fit", "Fit one estimator", caviar::cli::cmd_fit);
  fit.overrides.add<std::string>(fit.app, "--observations", "data.observations", "Observations CSV");
  fit.overrides.add<std::string>(fit.app, "--attributes", "data.attributes",
                                 "Attribute CSV whose keys register unobserved levels");
  fit.overrides.add<std::string>(fit.app, "-e,--estimator", "fit.estimator",
                                 "ols-absorbed, ols-dense, merged, lasso or caviar");
  fit.overrides.add<std::string>(fit.app, "--embedding", "data.embedding", "Embedding CSV for caviar");
  fit.overrides.add<std::size_t>(fit.app, "--folds", "fit.folds", "Cross-validation folds");
  fit.overrides.add<std::size_t>(fit.app, "--threshold", "fit.merge_threshold", "Merge levels seen fewer times");
  fit.overrides.add<std::string>(fit.app, "--lambda-rule", "fit.lambda_rule", "1se or min");

  auto& report = add_sub("report", "Diagnostics and SVG plots for a fit", caviar::cli::cmd_report);
  report.overrides.add<std::string>(report.app, "--fit", "data.fit", "fit.json from the fit command");
  report.overrides.add<std::string>(report.app, "--observations", "data.observations", "Observations CSV");
  report.overrides.add<std::string>(report.app, "--truth", "data.truth", "True effects CSV (level, fe)");
  report.overrides.add<std::size_t>(report.app, "--bins", "report.bins", "Histogram bins");
  report.overrides.add<double>(report.app, "--significance", "report.significance_level", "Test level");

  auto& replicate = add_sub("replicate", "Simulate, fit all estimators and check the reference bands",
                            caviar::cli::cmd_replicate);
  auto study = std::make_shared<std::string>();
  replicate.app->add_option("study", *study, "sim1 or sim2")->required()->check(CLI::IsMember({"sim1", "sim2"}));
  replicate.overrides.add<std::size_t>(replicate.app, "-n,--n", "simulate.n", "Observations");
  replicate.overrides.add<std::size_t>(replicate.app, "--levels", "simulate.levels", "Generated levels");
  replicate.overrides.add<std::size_t>(replicate.app, "--folds", "fit.folds", "Cross-validation folds");

  auto& cache = add_sub("encode-cache", "Encode level texts into the on-disk embedding cache",
                        caviar::cli::cmd_encode_cache);
  cache.overrides.add<std::string>(cache.app, "--attributes", "data.attributes", "Attribute CSV with a text column");
  cache.overrides.add<std::string>(cache.app, "--encoder", "embed.encoder", "mock or http");
  cache.overrides.add<std::string>(cache.app, "--cache", "embed.cache", "Cache file");
  cache.overrides.add<std::string>(cache.app, "--model", "embed.model", "Encoder model id");
  cache.overrides.add<std::string>(cache.app, "--endpoint", "embed.endpoint", "Encoder endpoint URL");
  cache.overrides.add<std::size_t>(cache.app, "--mock-dim", "embed.mock_dim", "Mock encoder dimension");

  CLI11_PARSE(app, argc, argv);

  for (auto& s : subs) {
    if (!s->app->parsed()) {
      continue;
    }
    try {
      json patch = s->overrides.patch();
      if (s.get() == &replicate) {
        patch["preset"] = *study;
      }
      patch.merge_patch(parse_sets(s->common.sets));
      RunConfig config = s->common.config.empty() ? caviar::cli::resolve_config(json::object(), patch)
                                                  : caviar::cli::load_config(s->common.config, patch);
      if (s->common.print_config) {
        std::cout << config.resolved.dump(2) << "\n";
        return 0;
      }
      return s->run(std::move(config), {std::cout, std::cerr});
    } catch (const caviar::cli::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  }
  return 0;
}
