#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <unordered_map>

#include <caviar/csv.hpp>
#include <caviar/diagnostics.hpp>
#include <caviar/estimators.hpp>
#include <caviar/io.hpp>
#include <caviar/simgen.hpp>
#include <caviar/svg.hpp>

namespace caviar::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (double x : v) {
    a.push_back(number(x));
  }
  return a;
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Fills an empty data path with the run-directory default and echoes the choice.
std::string resolve_input(RunConfig& c, std::string& field, const char* key, const RunDirectory& rd,
                          const char* name) {
  if (field.empty()) {
    field = rd.file(name).string();
    c.resolved["data"][key] = field;
  }
  return field;
}

LevelRegistry keys_from_csv(const fs::path& path, const std::string& column) {
  const auto t = csv::read(path);
  const auto kc = t.column(column);
  LevelRegistry reg;
  for (const auto& row : t.rows) {
    reg.intern(row[kc]);
  }
  return reg;
}

io::ObservationColumns columns_of(const DataSection& d) {
  return {d.outcome, d.covariates, d.level, d.factors};
}

ObservationTable load_observations(const RunConfig& c, LevelRegistry seed = {}) {
  const auto cols = columns_of(c.data);
  if (c.data.zip_digits == 0) {
    return io::read_observations(c.data.observations, cols, std::move(seed));
  }
  return truncate_levels(io::read_observations(c.data.observations, cols), c.data.zip_digits, std::move(seed));
}

json frequency_summary(const ObservationTable& data) {
  const auto ft = frequency_table(data.level);
  std::size_t distinct = 0;
  json table = json::object();
  for (const auto& [freq, count] : ft) {
    distinct += count;
    table[std::to_string(freq)] = count;
  }
  const auto at = [&](std::size_t f) { return ft.count(f) ? ft.at(f) : std::size_t{0}; };
  return {{"observations", data.rows()},
          {"registered_levels", data.num_levels()},
          {"distinct_levels", distinct},
          {"singletons", at(1)},
          {"doubletons", at(2)},
          {"max_frequency", ft.empty() ? 0 : ft.rbegin()->first},
          {"table", table}};
}

json describe(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  const double sd = v.size() > 1 ? std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", number(mean)}, {"sd", number(sd)}, {"min", number(v.minCoeff())}, {"max", number(v.maxCoeff())}};
}

json coefficient_table(const FitResult& fit) {
  json rows = json::array();
  const auto off = fit.has_intercept ? 1 : 0;
  if (fit.has_intercept) {
    rows.push_back({{"name", "(intercept)"}, {"estimate", number(fit.alpha)}, {"se", number(std::sqrt(fit.cov(0, 0)))}});
  }
  for (Eigen::Index i = 0; i < fit.coef.size(); ++i) {
    const auto k = i + off;
    const double se = k < fit.cov.rows() ? std::sqrt(fit.cov(k, k)) : NAN;
    rows.push_back({{"name", fit.coef_names[static_cast<std::size_t>(i)]}, {"estimate", number(fit.coef(i))},
                    {"se", number(se)}});
  }
  return rows;
}

json fit_summary(const FitResult& fit) {
  std::size_t counts[5] = {};
  for (auto s : fit.fe_status) {
    ++counts[static_cast<std::size_t>(s)];
  }
  json status = json::object();
  for (std::size_t s = 0; s < 5; ++s) {
    status[std::string(to_string(static_cast<LevelStatus>(s)))] = counts[s];
  }
  return {{"estimator", fit.estimator},
          {"observations", fit.num_observations},
          {"parameters", fit.num_parameters},
          {"df", fit.df},
          {"sigma2", number(fit.sigma2)},
          {"r_squared", number(fit.r_squared())},
          {"adjusted_r_squared", number(fit.df > 0 ? fit.adjusted_r_squared() : NAN)},
          {"coefficients", coefficient_table(fit)},
          {"level_status", status},
          {"warnings", fit.warnings}};
}

json histogram_json(const Histogram& h) {
  return {{"edges", h.edges}, {"counts", h.counts}, {"underflow", h.underflow}, {"overflow", h.overflow}};
}

json error_json(const ErrorReport& r) {
  return {{"levels", r.included.size()},
          {"observations", r.observations},
          {"level_mean", number(r.level_mean)},
          {"level_variance", number(r.level_variance)},
          {"obs_mean", number(r.obs_mean)},
          {"obs_variance", number(r.obs_variance)},
          {"obs_mse", number(r.obs_mse)},
          {"rmse", number(r.rmse)},
          {"obs_mean_sem", number(r.obs_mean_sem)},
          {"sem_method", r.sem_method},
          {"histogram", histogram_json(r.histogram)}};
}

json precision_json(const PrecisionTest& p) {
  return {{"observed_var", number(p.observed_var)}, {"mean_se2", number(p.mean_se2)}, {"sem", number(p.sem)},
          {"t", number(p.t)},  {"sem_iid", number(p.sem_iid)},   {"t_iid", number(p.t_iid)},
          {"levels", p.levels}, {"observations", p.observations}};
}

json significance_json(const SignificanceResult& s, double level) {
  return {{"level", level},
          {"critical_value", number(s.critical_value)},
          {"significant", s.significant},
          {"total", s.total},
          {"fraction", number(s.fraction())}};
}

json overfit_json(const OverfitReport& o) {
  return {{"zero_residuals", o.zero_residuals},
          {"singleton_levels", o.singleton_levels},
          {"parameters", o.parameters},
          {"observations", o.observations},
          {"parameter_ratio", number(o.parameter_ratio)},
          {"r_squared", number(o.r_squared)},
          {"adjusted_r_squared", number(o.adjusted_r_squared)},
          {"threshold", o.threshold},
          {"saturated", o.saturated}};
}

std::vector<double> included_values(const Eigen::VectorXd& v, const std::vector<LevelId>& levels) {
  std::vector<double> out;
  out.reserve(levels.size());
  for (auto z : levels) {
    out.push_back(v(z));
  }
  return out;
}

GeographyModel make_geography(const RunConfig& c) { return generate_geography(c.simulate.levels, c.seed); }

Simulation run_simulation(const RunConfig& c, const GeographyModel& geo) {
  const auto& s = c.simulate;
  if (s.kind == "field") {
    FieldConfig f;
    f.n = s.n;
    f.seed = c.seed;
    f.intercept = s.alpha;
    f.beta_coupon = s.beta_coupon;
    f.coupon_rate = s.coupon_rate;
    f.noise_sd = s.noise_sd;
    f.delta = s.delta;
    f.fe_scale = s.fe_scale;
    f.num_years = s.years;
    return simulate_field(geo, f);
  }
  SimConfig cfg;
  cfg.n = s.n;
  cfg.seed = c.seed;
  cfg.delta = s.delta;
  cfg.beta_price = s.beta_price;
  cfg.price_low = s.price_low;
  cfg.price_high = s.price_high;
  cfg.alpha = s.alpha;
  cfg.noise_sd = s.noise_sd;
  return simulate(geo, cfg, c.threads);
}

/// Short free-text description per level, the input a text encoder would see.
std::vector<std::string> describe_levels(const GeographyModel& geo) {
  const auto& a = geo.attributes;
  const auto lat = a.column("latitude"), lon = a.column("longitude"), ele = a.column("elevation"),
             pop = a.column("population");
  std::vector<std::string> text;
  text.reserve(geo.size());
  for (std::size_t z = 0; z < geo.size(); ++z) {
    const auto i = static_cast<Eigen::Index>(z);
    char buf[192];
    std::snprintf(buf, sizeof buf, "zip %s: latitude %.3f, longitude %.3f, elevation %.0f m, population %.0f",
                  geo.levels.key(static_cast<LevelId>(z)).c_str(), lat(i), lon(i), ele(i), pop(i));
    text.emplace_back(buf);
  }
  return text;
}

EmbeddingMatrix reduce(const EmbedSection& e, const Eigen::MatrixXd& features) {
  return e.reduction == "pca" ? pca_reduce(features, e.dims) : truncate_reduce(features, e.dims);
}

FitResult run_estimator(const RunConfig& c, const ObservationTable& data, const EmbeddingMatrix* emb,
                        json* extra) {
  const auto& f = c.fit;
  if (f.estimator == "ols-absorbed") {
    return fit_ols_absorbed(data);
  }
  if (f.estimator == "ols-dense") {
    return fit_ols_dense(data);
  }
  if (f.estimator == "merged") {
    return fit_merged_rare(data, f.merge_threshold);
  }
  if (f.estimator == "caviar") {
    return fit_caviar(data, *emb);
  }
  CvOptions cvo;
  cvo.folds = f.folds;
  cvo.seed = c.seed;
  cvo.threads = c.threads;
  cvo.lasso.num_lambda = f.num_lambda;
  cvo.lasso.lambda_min_ratio = f.lambda_min_ratio;
  cvo.lasso.tolerance = f.tolerance;
  const auto cv = cv_lasso(data, cvo);
  const auto point = f.lambda_rule == "min" ? cv.index_min : cv.index_1se;
  if (extra != nullptr) {
    std::vector<std::size_t> active;
    for (std::size_t p = 0; p < cv.path.solutions.size(); ++p) {
      active.push_back(cv.path.active_count(p));
    }
    *extra = {{"lambdas", cv.lambdas},   {"cvm", cv.cvm},
              {"cvsd", cv.cvsd},         {"active", active},
              {"index_min", cv.index_min}, {"index_1se", cv.index_1se},
              {"lambda_min", cv.lambda_min}, {"lambda_1se", cv.lambda_1se},
              {"lambda_max", cv.path.lambda_max}, {"folds", f.folds},
              {"seed", cv.seed},         {"reshuffles", cv.reshuffles},
              {"rule", f.lambda_rule}};
  }
  return lasso_fit_result(data, cv.path, point, "lasso-" + f.lambda_rule);
}

void print_warnings(const std::vector<std::string>& warnings, Streams io) {
  for (const auto& w : warnings) {
    io.err << "warning: " << w << "\n";
  }
}

template <class F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

RunDirectory::RunDirectory(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

void RunDirectory::record(std::string_view name) {
  const auto text = io::read_text(file(name));
  outputs_.push_back({{"file", std::string(name)}, {"bytes", text.size()}, {"fnv1a64", hex64(content_hash(text))}});
}

void RunDirectory::write(std::string_view name, const std::string& content) {
  io::write_text(file(name), content);
  record(name);
}

void RunDirectory::finish(std::string_view command, const RunConfig& config, json summary) {
  const std::string echo = "config." + std::string(command) + ".json";
  io::write_text(file(echo), config.resolved.dump(2) + "\n");
  json manifest = json::object();
  if (fs::exists(file("manifest.json"))) {
    try {
      manifest = json::parse(io::read_text(file("manifest.json")));
    } catch (const json::exception&) {
      manifest = json::object();
    }
    if (!manifest.is_object()) {
      manifest = json::object();
    }
  }
  manifest["format"] = 1;
  manifest["commands"][std::string(command)] = {{"config", echo}, {"outputs", outputs_}, {"summary", std::move(summary)}};
  io::write_text(file("manifest.json"), manifest.dump(2) + "\n");
}

std::string truncate_key(std::string_view key, int digits) {
  if (digits <= 0 || key.size() <= static_cast<std::size_t>(digits)) {
    return std::string(key);
  }
  return std::string(key.substr(0, static_cast<std::size_t>(digits)));
}

ObservationTable truncate_levels(const ObservationTable& data, int digits, LevelRegistry seed) {
  ObservationTable out;
  out.outcome_name = data.outcome_name;
  out.y = data.y;
  out.x = data.x;
  out.covariate_names = data.covariate_names;
  out.factors = data.factors;
  out.levels = std::move(seed);
  std::vector<LevelId> map(data.num_levels());
  for (std::size_t z = 0; z < data.num_levels(); ++z) {
    map[z] = out.levels.intern(truncate_key(data.levels.key(static_cast<LevelId>(z)), digits));
  }
  out.level.resize(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    out.level[i] = map[data.level[i]];
  }
  out.validate();
  return out;
}

LevelAttributeTable aggregate_attributes(const LevelRegistry& levels, const LevelAttributeTable& attrs, int digits,
                                         LevelRegistry& grouped) {
  std::vector<LevelId> group(levels.size());
  for (std::size_t z = 0; z < levels.size(); ++z) {
    group[z] = grouped.intern(truncate_key(levels.key(static_cast<LevelId>(z)), digits));
  }
  const auto g = static_cast<Eigen::Index>(grouped.size());
  LevelAttributeTable out;
  out.column_names = attrs.column_names;
  out.values = Eigen::MatrixXd::Zero(g, attrs.values.cols());
  Eigen::VectorXd members = Eigen::VectorXd::Zero(g);
  for (std::size_t z = 0; z < levels.size(); ++z) {
    out.values.row(group[z]) += attrs.values.row(static_cast<Eigen::Index>(z));
    members(group[z]) += 1.0;
  }
  for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
    if (out.column_names[static_cast<std::size_t>(c)] != "population") {
      out.values.col(c).array() /= members.array();
    }
  }
  if (!attrs.text.empty()) {
    out.text.assign(grouped.size(), "");
    std::vector<bool> filled(grouped.size(), false);
    for (std::size_t z = 0; z < levels.size(); ++z) {
      if (!filled[group[z]]) {
        out.text[group[z]] = attrs.text[z];
        filled[group[z]] = true;
      }
    }
  }
  return out;
}

std::vector<std::vector<double>> CountingEncoder::encode_batch(std::span<const std::string> texts) {
  ++calls_;
  texts_ += texts.size();
  return inner_.encode_batch(texts);
}

std::unique_ptr<Encoder> make_encoder(const EmbedSection& e) {
  if (e.encoder == "mock") {
    return std::make_unique<MockEncoder>(e.mock_dim, "mock-encoder", e.max_batch);
  }
  if (e.encoder == "http") {
    HttpEncoderConfig h;
    h.endpoint = e.endpoint;
    h.model = e.model;
    h.timeout = std::chrono::milliseconds(e.timeout_ms);
    h.max_batch = e.max_batch;
    h.retry.max_attempts = e.max_attempts;
    h.retry.backoff_base = std::chrono::milliseconds(e.backoff_ms);
    h.api_key_env = e.api_key_env;
    h.schema = e.schema == "plain" ? ResponseSchema::plain : ResponseSchema::openai;
    return std::make_unique<HttpEncoder>(h);
  }
  throw ConfigError("embed.encoder is 'none'; choose 'mock' or 'http' to encode text");
}

int cmd_simulate(RunConfig c, Streams io) {
  RunDirectory rd(c.run_dir);
  const auto geo = make_geography(c);
  auto sim = run_simulation(c, geo);
  sim.data.outcome_name = c.data.outcome;

  auto attrs = geo.attributes;
  attrs.text = describe_levels(geo);
  io::write_observations(rd.file("observations.csv"), sim.data, c.data.level);
  rd.record("observations.csv");
  io::write_attributes(rd.file("attributes.csv"), geo.levels, attrs, c.data.attribute_key);
  rd.record("attributes.csv");
  io::write_level_values(rd.file("truth.csv"), geo.levels, sim.truth, "fe");
  rd.record("truth.csv");
  if (c.report.svg) {
    rd.write("frequency.svg", svg::frequency(frequency_table(sim.data.level), "Observations per level"));
  }

  auto freq = frequency_summary(sim.data);
  json summary = {{"kind", c.simulate.kind},
                  {"seed", c.seed},
                  {"lat_max", sim.lat_max},
                  {"frequency", freq},
                  {"truth", describe(sim.truth)}};
  io.out << fmt("simulated %zu rows over %zu levels: %zu observed, %zu singletons, %zu doubletons\n", sim.data.rows(),
                geo.size(), freq["distinct_levels"].get<std::size_t>(), freq["singletons"].get<std::size_t>(),
                freq["doubletons"].get<std::size_t>());
  rd.finish("simulate", c, std::move(summary));
  return 0;
}

int cmd_embed(RunConfig c, Streams io) {
  RunDirectory rd(c.run_dir);
  const auto path = resolve_input(c, c.data.attributes, "attributes", rd, "attributes.csv");
  const bool encode = c.embed.encoder != "none";
  std::string text_col = c.data.text_column;
  if (encode && text_col.empty()) {
    text_col = "text";
  } else if (!encode && text_col.empty() && csv::read(path).has_column("text")) {
    text_col = "text";
  }
  auto af = io::read_attributes(path, c.data.attribute_key, text_col);
  if (c.data.zip_digits > 0) {
    LevelRegistry grouped;
    af.attributes = aggregate_attributes(af.levels, af.attributes, c.data.zip_digits, grouped);
    af.levels = std::move(grouped);
  }

  FeatureSpec spec;
  spec.columns = c.embed.features;
  spec.standardize = c.embed.standardize;
  Eigen::MatrixXd text_vectors;
  json encoder_summary = nullptr;
  if (encode) {
    if (af.attributes.text.empty()) {
      throw ValidationError("attribute file has no text column '" + text_col + "' to encode");
    }
    auto encoder = make_encoder(c.embed);
    CountingEncoder counting(*encoder);
    std::unique_ptr<EmbeddingCache> cache =
        c.embed.cache.empty() ? std::make_unique<EmbeddingCache>() : std::make_unique<EmbeddingCache>(c.embed.cache);
    const auto before = cache->size();
    text_vectors = encode_texts(af.attributes.text, counting, *cache, {c.embed.max_in_flight});
    spec.text_dims = c.embed.text_dims == 0 ? static_cast<std::size_t>(text_vectors.cols()) : c.embed.text_dims;
    encoder_summary = {{"model", counting.model_id()},
                       {"calls", counting.calls()},
                       {"texts_sent", counting.texts()},
                       {"cache_entries_before", before},
                       {"cache_entries_after", cache->size()},
                       {"cache_dropped_records", cache->dropped_records()},
                       {"dims", text_vectors.cols()}};
    io.out << fmt("encoded %zu texts with %zu encoder call(s)\n", af.attributes.text.size(), counting.calls());
  }
  const auto features = assemble_features(af.attributes, encode ? &text_vectors : nullptr, spec);
  auto emb = reduce(c.embed, features.values);
  emb.feature_names = features.column_names;
  print_warnings(emb.warnings, io);

  io::write_embedding(rd.file("embedding.csv"), af.levels, emb);
  rd.record("embedding.csv");
  json meta = {{"reduction", emb.reduction},
               {"levels", emb.num_levels()},
               {"dims", emb.dims()},
               {"features", emb.feature_names},
               {"explained_variance", vector_json(emb.explained_variance)},
               {"center", vector_json(emb.center)},
               {"warnings", emb.warnings},
               {"encoder", encoder_summary}};
  json basis = json::array();
  for (Eigen::Index r = 0; r < emb.basis.rows(); ++r) {
    basis.push_back(vector_json(emb.basis.row(r).transpose()));
  }
  meta["basis"] = basis;
  rd.write("embedding.json", meta.dump(2) + "\n");
  io.out << fmt("embedded %zu levels into %zu coordinates (%s of %zu features)\n", emb.num_levels(), emb.dims(),
                emb.reduction.c_str(), features.column_names.size());
  meta.erase("basis");
  meta.erase("center");
  rd.finish("embed", c, std::move(meta));
  return 0;
}

int cmd_fit(RunConfig c, Streams io) {
  RunDirectory rd(c.run_dir);
  resolve_input(c, c.data.observations, "observations", rd, "observations.csv");
  const bool caviar = c.fit.estimator == "caviar";
  LevelRegistry seed;
  if (caviar) {
    resolve_input(c, c.data.embedding, "embedding", rd, "embedding.csv");
    seed = keys_from_csv(c.data.embedding, "level");
  } else if (!c.data.attributes.empty()) {
    seed = keys_from_csv(c.data.attributes, c.data.attribute_key);
    if (c.data.zip_digits > 0) {
      LevelRegistry grouped;
      for (const auto& k : seed.keys()) {
        grouped.intern(truncate_key(k, c.data.zip_digits));
      }
      seed = std::move(grouped);
    }
  }
  const auto data = load_observations(c, std::move(seed));
  std::optional<EmbeddingMatrix> emb;
  if (caviar) {
    emb = io::read_embedding(c.data.embedding, data.levels);
  }
  json cv = nullptr;
  auto fit = run_estimator(c, data, emb ? &*emb : nullptr, &cv);
  print_warnings(fit.warnings, io);

  rd.write("fit.json", io::fit_to_json(fit, data.levels));
  const auto sig = significance_count(fit, 0.0, c.report.significance_level);
  io::write_fe_csv(rd.file("fe.csv"), fit, data.levels, sig.flags);
  rd.record("fe.csv");
  if (!cv.is_null()) {
    rd.write("cv.json", cv.dump(2) + "\n");
  }
  auto summary = fit_summary(fit);
  summary["significance"] = significance_json(sig, c.report.significance_level);
  if (!cv.is_null()) {
    summary["lambda_min"] = cv["lambda_min"];
    summary["lambda_1se"] = cv["lambda_1se"];
  }
  io.out << fmt("%s: %zu observations, %zu parameters, R2 %.4f\n", fit.estimator.c_str(), fit.num_observations,
                fit.num_parameters, fit.r_squared());
  for (const auto& row : summary["coefficients"]) {
    io.out << "  " << row["name"].get<std::string>() << " = " << row["estimate"].dump() << " (se "
           << row["se"].dump() << ")\n";
  }
  rd.finish("fit", c, std::move(summary));
  return 0;
}

int cmd_report(RunConfig c, Streams io) {
  RunDirectory rd(c.run_dir);
  resolve_input(c, c.data.fit, "fit", rd, "fit.json");
  resolve_input(c, c.data.observations, "observations", rd, "observations.csv");
  if (c.data.truth.empty() && c.data.zip_digits == 0 && fs::exists(rd.file("truth.csv"))) {
    resolve_input(c, c.data.truth, "truth", rd, "truth.csv");
  }
  const auto text = io::read_text(c.data.fit);
  LevelRegistry seed;
  try {
    const auto parsed = json::parse(text);
    for (const auto& k : parsed.at("levels")) {
      seed.intern(k.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError("fit file " + c.data.fit + " has no level list: " + e.what());
  }
  const auto fit_levels = seed.size();
  const auto data = load_observations(c, std::move(seed));
  if (data.num_levels() != fit_levels) {
    throw ValidationError("observations contain " + std::to_string(data.num_levels() - fit_levels) +
                          " level(s) that the fit does not cover");
  }
  const auto fit = io::fit_from_json(text, data.levels);

  HistogramOptions hopt;
  hopt.bins = c.report.bins;
  hopt.width_sds = c.report.width_sds;
  const auto sig = significance_count(fit, 0.0, c.report.significance_level);
  const auto over = overfit_report(fit, data);
  json report = {{"fit", fit_summary(fit)},
                 {"significance", significance_json(sig, c.report.significance_level)},
                 {"overfit", overfit_json(over)}};

  std::vector<double> fe_values;
  for (std::size_t z = 0; z < fit.num_levels(); ++z) {
    if (fit.fe_status[z] == LevelStatus::estimated || fit.fe_status[z] == LevelStatus::pooled) {
      fe_values.push_back(fit.fe(static_cast<Eigen::Index>(z)));
    }
  }
  if (!fe_values.empty()) {
    const auto h = make_histogram(fe_values, hopt);
    report["fe_histogram"] = histogram_json(h);
    if (c.report.svg) {
      rd.write("fe_histogram.svg", svg::histogram(h, "Estimated fixed effects (" + fit.estimator + ")", "estimate"));
    }
  }
  if (!c.data.truth.empty()) {
    const auto truth = io::read_level_values(c.data.truth, data.levels, "fe");
    const auto err = error_report(fit, truth, hopt);
    report["errors"] = error_json(err);
    if (fit.fe_cov && fit.df > 0) {
      report["precision"] = precision_json(precision_consistency(fit, truth));
    }
    if (c.report.svg && !err.included.empty()) {
      const auto e = included_values(err.error, err.included);
      rd.write("errors.svg", svg::histogram(err.histogram, "Estimation errors (" + fit.estimator + ")", "estimate - truth"));
      rd.write("errors_ecdf.svg", svg::ecdf({{fit.estimator, Ecdf(e)}}, "Empirical CDF of estimation errors",
                                            "estimate - truth"));
      rd.write("fe_vs_truth.svg", svg::scatter(included_values(truth, err.included),
                                               included_values(fit.fe, err.included),
                                               "Estimated against true fixed effects", "truth", "estimate"));
    }
    io.out << fmt("errors over %zu levels: mean %.4f (sem %.4f), level variance %.4f, rmse %.4f\n",
                  err.included.size(), err.obs_mean, err.obs_mean_sem, err.level_variance, err.rmse);
  }
  rd.write("report.json", report.dump(2) + "\n");
  io.out << fmt("%zu of %zu levels significant at %.3g; %zu zero residuals, %zu singleton levels\n", sig.significant,
                sig.total, c.report.significance_level, over.zero_residuals, over.singleton_levels);
  rd.finish("report", c, {{"significance", report["significance"]}, {"overfit", report["overfit"]}});
  return 0;
}

namespace {

struct Band {
  std::string name;
  bool applies = true;
  bool pass = false;
  std::string detail;
};

json bands_json(const std::vector<Band>& bands) {
  json a = json::array();
  for (const auto& b : bands) {
    a.push_back({{"name", b.name}, {"status", !b.applies ? "skipped" : b.pass ? "pass" : "fail"}, {"detail", b.detail}});
  }
  return a;
}

/// True coefficient on one embedding column when the embedding keeps the simulation's
/// standardized features unchanged.
std::optional<double> true_gamma(const std::string& feature, const std::vector<std::pair<std::string, double>>& delta) {
  const bool descending = !feature.empty() && feature.front() == '-';
  const auto name = descending ? feature.substr(1) : feature;
  for (const auto& [f, d] : delta) {
    if (f == name) {
      if (d == 0.0) return 0.0;
      if ((d < 0.0) == descending) return std::abs(d);
      return std::nullopt;
    }
  }
  return 0.0;
}

}  // namespace

int cmd_replicate(RunConfig c, Streams io) {
  if (c.simulate.kind != "sim") {
    throw ConfigError("replicate runs the sim1 or sim2 studies; preset '" + c.preset + "' is not one of them");
  }
  RunDirectory rd(c.run_dir);
  const bool reference_scale = c.simulate.n >= 100000 && c.simulate.levels == kDefaultSimLevels;
  const double noise2 = c.simulate.noise_sd * c.simulate.noise_sd;

  const auto geo = stage("geography", [&] { return make_geography(c); });
  const auto sim = stage("simulate", [&] { return run_simulation(c, geo); });
  const auto& data = sim.data;

  HistogramOptions hopt;
  hopt.bins = c.report.bins;
  hopt.width_sds = c.report.width_sds;

  const auto sat = stage("ols-absorbed", [&] { return fit_ols_absorbed(data); });
  const auto merged = stage("merged", [&] { return fit_merged_rare(data, c.fit.merge_threshold); });
  json cv_json;
  auto lasso_cfg = c;
  lasso_cfg.fit.estimator = "lasso";
  const auto lasso = stage("lasso", [&] { return run_estimator(lasso_cfg, data, nullptr, &cv_json); });
  const auto emb = stage("embed", [&] {
    FeatureSpec spec;
    spec.columns = c.embed.features;
    spec.standardize = c.embed.standardize;
    return reduce(c.embed, assemble_features(geo.attributes, nullptr, spec).values);
  });
  const auto cav = stage("caviar", [&] { return fit_caviar(data, emb); });

  std::vector<Band> bands;
  json estimators = json::object();
  stage("diagnostics", [&] {
    const auto sat_err = error_report(sat, sim.truth, hopt);
    HistogramOptions shared = hopt;
    shared.range = std::make_pair(sat_err.histogram.edges.front(), sat_err.histogram.edges.back());
    const std::pair<const char*, const FitResult*> fits[] = {
        {"saturated", &sat}, {"merged", &merged}, {"lasso", &lasso}, {"caviar", &cav}};
    std::vector<std::pair<std::string, Ecdf>> ecdfs;
    std::unordered_map<std::string, ErrorReport> errs;
    for (const auto& [name, fit] : fits) {
      auto err = error_report(*fit, sim.truth, shared);
      json entry = fit_summary(*fit);
      entry["errors"] = error_json(err);
      if (fit->fe_cov) {
        entry["precision"] = precision_json(precision_consistency(*fit, sim.truth));
      }
      entry["significance"] = significance_json(significance_count(*fit, 0.0, c.report.significance_level),
                                                c.report.significance_level);
      entry["overfit"] = overfit_json(overfit_report(*fit, data));
      if (c.report.svg) {
        const std::string file = std::string("errors_") + name + ".svg";
        rd.write(file, svg::histogram(err.histogram, std::string("Estimation errors: ") + name, "estimate - truth"));
        entry["svg"] = file;
      }
      ecdfs.emplace_back(name, Ecdf(included_values(err.error, err.included)));
      estimators[name] = std::move(entry);
      errs.emplace(name, std::move(err));
    }
    estimators["lasso"]["cv"] = cv_json;
    if (c.report.svg) {
      rd.write("errors_ecdf.svg", svg::ecdf(ecdfs, "Empirical CDF of estimation errors", "estimate - truth"));
      rd.write("frequency.svg", svg::frequency(frequency_table(data.level), "Observations per level"));
      const auto& ce = errs.at("caviar");
      rd.write("caviar_vs_truth.svg", svg::scatter(included_values(sim.truth, ce.included),
                                                   included_values(cav.fe, ce.included),
                                                   "CAVIAR estimates against truth", "truth", "estimate"));
    }

    const auto& se = errs.at("saturated");
    const auto sat_pt = precision_consistency(sat, sim.truth);
    const double l_obs = static_cast<double>(se.included.size());
    const double expected_se2 = noise2 * l_obs / static_cast<double>(data.rows());
    bands.push_back({"saturated: mean error within 3 SEM of 0", true, std::abs(se.obs_mean) <= 3.0 * se.obs_mean_sem,
                     fmt("mean %.4f, sem %.4f", se.obs_mean, se.obs_mean_sem)});
    bands.push_back({"saturated: mean SE^2 within 5% of sigma^2 L_obs / n", reference_scale,
                     std::abs(sat_pt.mean_se2 - expected_se2) <= 0.05 * expected_se2,
                     fmt("mean SE^2 %.4f, expected %.4f", sat_pt.mean_se2, expected_se2)});
    bands.push_back({"saturated: precision-test t > 0", reference_scale, sat_pt.t > 0.0, fmt("t %.2f", sat_pt.t)});
    const auto over = overfit_report(sat, data);
    bands.push_back({"saturated: zero residuals >= singleton levels", true,
                     over.zero_residuals >= over.singleton_levels,
                     fmt("%zu zero residuals, %zu singletons", over.zero_residuals, over.singleton_levels)});
    const auto sig = significance_count(sat, 0.0, c.report.significance_level);
    const bool sim2 = std::any_of(c.simulate.delta.begin(), c.simulate.delta.end(),
                                  [](const auto& d) { return d.first == "elevation" && d.second != 0.0; });
    bands.push_back({sim2 ? "saturated: >= 99.9% of levels significant" : "saturated: 70-85% of levels significant",
                     reference_scale, sim2 ? sig.fraction() >= 0.999 : sig.fraction() >= 0.70 && sig.fraction() <= 0.85,
                     fmt("%zu / %zu = %.2f%%", sig.significant, sig.total, 100.0 * sig.fraction())});

    const auto& me = errs.at("merged");
    bands.push_back({"merged: mean error beyond 3 SEM of 0", reference_scale, std::abs(me.obs_mean) > 3.0 * me.obs_mean_sem,
                     fmt("mean %.4f, sem %.4f", me.obs_mean, me.obs_mean_sem)});
    bands.push_back({"merged: per-level error variance below saturated", reference_scale,
                     me.level_variance < se.level_variance,
                     fmt("%.4f vs %.4f", me.level_variance, se.level_variance)});

    const double lmin = cv_json["lambda_min"], l1se = cv_json["lambda_1se"];
    bands.push_back({"lasso: lambda_1se >= lambda_min", true, l1se >= lmin, fmt("%.4g vs %.4g", l1se, lmin)});
    std::size_t observed = 0, retained = 0, singles = 0;
    for (std::size_t z = 0; z < lasso.num_levels(); ++z) {
      if (lasso.level_counts[z] == 0) continue;
      ++observed;
      if (lasso.fe_status[z] == LevelStatus::estimated) {
        ++retained;
        singles += lasso.level_counts[z] == 1 ? 1 : 0;
      }
    }
    const double kept = observed > 0 ? static_cast<double>(retained) / static_cast<double>(observed) : 0.0;
    bands.push_back({"lasso: 65-85% of observed levels retained at lambda_1se", reference_scale,
                     kept >= 0.65 && kept <= 0.85, fmt("%zu / %zu = %.1f%%", retained, observed, 100.0 * kept)});
    bands.push_back({"lasso: at least one singleton level retained", reference_scale, singles >= 1,
                     fmt("%zu singletons retained", singles)});

    const auto& ce = errs.at("caviar");
    const auto cav_pt = precision_consistency(cav, sim.truth);
    const auto idx = [&](const std::string& name) {
      const auto it = std::find(cav.coef_names.begin(), cav.coef_names.end(), name);
      return static_cast<Eigen::Index>(it - cav.coef_names.begin());
    };
    const auto price = idx("price");
    const double bp = cav.coef(price), bp_se = std::sqrt(cav.cov(price + 1, price + 1));
    bands.push_back({"caviar: price coefficient within 3 SE of truth", true,
                     std::abs(bp - c.simulate.beta_price) <= 3.0 * bp_se, fmt("%.4f (se %.4f)", bp, bp_se)});
    const bool direct = emb.reduction != "pca" && emb.dims() == c.embed.features.size();
    for (std::size_t k = 0; k < c.embed.features.size() && k < emb.dims(); ++k) {
      const auto truth = true_gamma(c.embed.features[k], c.simulate.delta);
      const auto g = idx("gamma_" + std::to_string(k + 1));
      const double est = cav.coef(g), sd = std::sqrt(cav.cov(g + 1, g + 1));
      bands.push_back({"caviar: coefficient on " + c.embed.features[k] + " within 3 SE of truth",
                       direct && truth.has_value(), truth && std::abs(est - *truth) <= 3.0 * sd,
                       fmt("%.4f (se %.4f), truth %.4g", est, sd, truth.value_or(NAN))});
    }
    bands.push_back({"caviar: precision-test |t| < 3", true, std::abs(cav_pt.t) < 3.0, fmt("t %.2f", cav_pt.t)});
    bands.push_back({"caviar: fixed-effect RMSE < 0.05", reference_scale, ce.rmse < 0.05, fmt("%.4f", ce.rmse)});
    const double ratio = std::sqrt(se.level_variance / ce.level_variance);
    bands.push_back({"caviar: error SD at least 5x below saturated", reference_scale, ratio >= 5.0, fmt("ratio %.1f", ratio)});

    if (sim2) {
      auto base = c;
      base.simulate.delta.clear();
      for (const auto& [f, d] : c.simulate.delta) {
        if (f != "elevation") base.simulate.delta.emplace_back(f, d);
      }
      const auto sim1 = run_simulation(base, geo);
      const auto fit1 = fit_ols_absorbed(sim1.data);
      const auto err1 = error_report(fit1, sim1.truth, shared);
      double gap = 0.0;
      for (auto z : se.included) {
        gap = std::max(gap, std::abs(se.error(z) - err1.error(z)));
      }
      bands.push_back({"saturated: errors identical to the study without elevation", true, gap <= 1e-8,
                       fmt("max difference %.3g", gap)});
      estimators["saturated_without_elevation"] = {{"errors", error_json(err1)},
                                                   {"significance", significance_json(
                                                        significance_count(fit1, 0.0, c.report.significance_level),
                                                        c.report.significance_level)}};
    }
    return 0;
  });

  bool ok = true;
  for (const auto& b : bands) {
    ok = ok && (!b.applies || b.pass);
    io.out << (!b.applies ? "SKIP" : b.pass ? "PASS" : "FAIL") << "  " << b.name << " | " << b.detail << "\n";
  }
  json bundle = {{"study", c.preset},
                 {"reference_scale", reference_scale},
                 {"simulation", {{"lat_max", sim.lat_max}, {"frequency", frequency_summary(data)}, {"truth", describe(sim.truth)}}},
                 {"embedding", {{"reduction", emb.reduction}, {"dims", emb.dims()}, {"features", c.embed.features}}},
                 {"estimators", estimators},
                 {"bands", bands_json(bands)},
                 {"passed", ok}};
  rd.write("replicate.json", bundle.dump(2) + "\n");
  rd.finish("replicate", c, {{"study", c.preset}, {"passed", ok}, {"bands", bands_json(bands)}});
  io.out << (ok ? "all applicable bands pass\n" : "one or more bands failed\n");
  return ok ? 0 : 1;
}

int cmd_encode_cache(RunConfig c, Streams io) {
  RunDirectory rd(c.run_dir);
  const auto path = resolve_input(c, c.data.attributes, "attributes", rd, "attributes.csv");
  if (c.embed.cache.empty()) {
    c.embed.cache = rd.file("embeddings.cache").string();
    c.resolved["embed"]["cache"] = c.embed.cache;
  }
  const auto text_col = c.data.text_column.empty() ? std::string("text") : c.data.text_column;
  const auto af = io::read_attributes(path, c.data.attribute_key, text_col);
  auto encoder = make_encoder(c.embed);
  CountingEncoder counting(*encoder);
  EmbeddingCache cache(c.embed.cache);
  const auto before = cache.size();
  const auto dropped = cache.dropped_records();
  const auto vectors = encode_texts(af.attributes.text, counting, cache, {c.embed.max_in_flight});
  json summary = {{"cache", c.embed.cache},
                  {"model", counting.model_id()},
                  {"texts", af.attributes.text.size()},
                  {"dims", vectors.cols()},
                  {"entries_before", before},
                  {"entries_after", cache.size()},
                  {"dropped_records", dropped},
                  {"calls", counting.calls()},
                  {"texts_sent", counting.texts()}};
  rd.write("encode_cache.json", summary.dump(2) + "\n");
  io.out << fmt("cache %s: %zu entries (%zu new), %zu encoder call(s), %zu corrupt record(s) dropped\n",
                c.embed.cache.c_str(), cache.size(), cache.size() - before, counting.calls(), dropped);
  rd.finish("encode-cache", c, std::move(summary));
  return 0;
}

}  // namespace caviar::cli
