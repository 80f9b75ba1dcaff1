#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "caviar/csv.hpp"
#include "caviar/io.hpp"

namespace caviar::io {
namespace {

using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write '" + path.string() + "'");
  }
  return out;
}

std::string where(const std::filesystem::path& path, std::size_t row, std::string_view col) {
  return path.string() + ":" + std::to_string(row + 2) + " column '" + std::string(col) + "'";
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(number(v(i)));
  }
  return a;
}

Eigen::VectorXd vector_from(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = number_from(a[i]);
  }
  return v;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    a.push_back(vector_json(m.row(r).transpose()));
  }
  return a;
}

Eigen::MatrixXd matrix_from(const json& a, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(a.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(a[0].size()) : cols_if_empty;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = a[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw ValidationError("ragged matrix in JSON");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = number_from(row[static_cast<std::size_t>(c)]);
    }
  }
  return m;
}

}  // namespace

ObservationTable read_observations(const std::filesystem::path& path, const ObservationColumns& columns,
                                   LevelRegistry registry) {
  const auto t = csv::read(path);
  ObservationTable data;
  data.outcome_name = columns.outcome;
  data.covariate_names = columns.covariates;
  const auto n = t.rows.size();
  const auto yc = t.column(columns.outcome);
  const auto lc = t.column(columns.level);
  std::vector<std::size_t> xc;
  for (const auto& c : columns.covariates) {
    xc.push_back(t.column(c));
  }
  std::vector<std::size_t> fc;
  for (const auto& f : columns.factors) {
    fc.push_back(t.column(f));
    data.factors.push_back(Factor{f, {}, {}});
  }
  data.y.resize(static_cast<Eigen::Index>(n));
  data.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(xc.size()));
  data.level.resize(n);
  std::vector<std::unordered_map<std::string, std::uint32_t>> factor_index(fc.size());
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = t.rows[r];
    const auto i = static_cast<Eigen::Index>(r);
    data.y(i) = csv::parse_double(row[yc], where(path, r, columns.outcome));
    for (std::size_t c = 0; c < xc.size(); ++c) {
      data.x(i, static_cast<Eigen::Index>(c)) = csv::parse_double(row[xc[c]], where(path, r, columns.covariates[c]));
    }
    if (row[lc].empty()) {
      throw ValidationError("empty level key at " + where(path, r, columns.level));
    }
    data.level[r] = registry.intern(row[lc]);
    for (std::size_t f = 0; f < fc.size(); ++f) {
      auto& fac = data.factors[f];
      const auto& label = row[fc[f]];
      auto [it, fresh] = factor_index[f].emplace(label, static_cast<std::uint32_t>(fac.labels.size()));
      if (fresh) {
        fac.labels.push_back(label);
      }
      fac.index.push_back(it->second);
    }
  }
  data.levels = std::move(registry);
  data.validate();
  return data;
}

void write_observations(const std::filesystem::path& path, const ObservationTable& data,
                        const std::string& level_column) {
  auto out = open_out(path);
  std::vector<std::string> header{data.outcome_name};
  header.insert(header.end(), data.covariate_names.begin(), data.covariate_names.end());
  header.push_back(level_column);
  for (const auto& f : data.factors) {
    header.push_back(f.name);
  }
  csv::write_row(out, header);
  std::vector<std::string> cells;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    cells.clear();
    cells.push_back(csv::format_double(data.y(i)));
    for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
      cells.push_back(csv::format_double(data.x(i, c)));
    }
    cells.push_back(data.levels.key(data.level[r]));
    for (const auto& f : data.factors) {
      cells.push_back(f.labels[f.index[r]]);
    }
    csv::write_row(out, cells);
  }
}

AttributeFile read_attributes(const std::filesystem::path& path, const std::string& key_column,
                              const std::string& text_column) {
  const auto t = csv::read(path);
  const auto kc = t.column(key_column);
  const std::size_t tc = text_column.empty() ? t.header.size() : t.column(text_column);
  AttributeFile af;
  std::vector<std::size_t> numeric;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c != kc && c != tc) {
      numeric.push_back(c);
      af.attributes.column_names.push_back(t.header[c]);
    }
  }
  af.attributes.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(numeric.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto before = af.levels.size();
    const auto id = af.levels.intern(row[kc]);
    if (af.levels.size() == before) {
      throw ValidationError("duplicate level key '" + row[kc] + "' in " + path.string());
    }
    for (std::size_t c = 0; c < numeric.size(); ++c) {
      af.attributes.values(id, static_cast<Eigen::Index>(c)) =
          csv::parse_double(row[numeric[c]], where(path, r, t.header[numeric[c]]));
    }
    if (tc < t.header.size()) {
      af.attributes.text.push_back(row[tc]);
    }
  }
  af.attributes.validate(af.levels.size());
  return af;
}

void write_attributes(const std::filesystem::path& path, const LevelRegistry& levels,
                      const LevelAttributeTable& attributes, const std::string& key_column) {
  attributes.validate(levels.size());
  auto out = open_out(path);
  std::vector<std::string> header{key_column};
  header.insert(header.end(), attributes.column_names.begin(), attributes.column_names.end());
  if (!attributes.text.empty()) {
    header.emplace_back("text");
  }
  csv::write_row(out, header);
  for (std::size_t r = 0; r < levels.size(); ++r) {
    std::vector<std::string> cells{levels.key(static_cast<LevelId>(r))};
    for (Eigen::Index c = 0; c < attributes.values.cols(); ++c) {
      cells.push_back(csv::format_double(attributes.values(static_cast<Eigen::Index>(r), c)));
    }
    if (!attributes.text.empty()) {
      cells.push_back(attributes.text[r]);
    }
    csv::write_row(out, cells);
  }
}

LevelAttributeTable align_attributes(const AttributeFile& source, const LevelRegistry& target) {
  LevelAttributeTable out;
  out.column_names = source.attributes.column_names;
  out.values.resize(static_cast<Eigen::Index>(target.size()), source.attributes.values.cols());
  std::vector<std::string> missing;
  for (std::size_t z = 0; z < target.size(); ++z) {
    const auto& key = target.key(static_cast<LevelId>(z));
    const auto src = source.levels.find(key);
    if (!src) {
      missing.push_back(key);
      continue;
    }
    out.values.row(static_cast<Eigen::Index>(z)) = source.attributes.values.row(*src);
    if (!source.attributes.text.empty()) {
      out.text.push_back(source.attributes.text[*src]);
    }
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " level(s) have no attribute row, e.g.";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, missing.size()); ++i) {
      msg += " '" + missing[i] + "'";
    }
    throw ValidationError(msg);
  }
  return out;
}

void write_level_values(const std::filesystem::path& path, const LevelRegistry& levels, const Eigen::VectorXd& values,
                        const std::string& value_column) {
  if (static_cast<std::size_t>(values.size()) != levels.size()) {
    throw ValidationError("value vector does not match the registry");
  }
  auto out = open_out(path);
  csv::write_row(out, {"level", value_column});
  for (std::size_t z = 0; z < levels.size(); ++z) {
    csv::write_row(out, {levels.key(static_cast<LevelId>(z)), csv::format_double(values(static_cast<Eigen::Index>(z)))});
  }
}

Eigen::VectorXd read_level_values(const std::filesystem::path& path, const LevelRegistry& levels,
                                  const std::string& value_column, const std::string& key_column) {
  const auto t = csv::read(path);
  const auto kc = t.column(key_column);
  const auto vc = t.column(value_column);
  Eigen::VectorXd v = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(levels.size()), kNaN);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (const auto id = levels.find(t.rows[r][kc])) {
      const auto& cell = t.rows[r][vc];
      v(*id) = cell == "NA" ? kNaN : csv::parse_double(cell, where(path, r, value_column));
    }
  }
  return v;
}

void write_embedding(const std::filesystem::path& path, const LevelRegistry& levels, const EmbeddingMatrix& emb) {
  if (emb.num_levels() != levels.size()) {
    throw ValidationError("embedding rows do not match the registry");
  }
  auto out = open_out(path);
  std::vector<std::string> header{"level"};
  for (std::size_t j = 0; j < emb.dims(); ++j) {
    header.push_back("x" + std::to_string(j + 1));
  }
  csv::write_row(out, header);
  for (std::size_t z = 0; z < levels.size(); ++z) {
    std::vector<std::string> cells{levels.key(static_cast<LevelId>(z))};
    for (Eigen::Index j = 0; j < emb.coords.cols(); ++j) {
      cells.push_back(csv::format_double(emb.coords(static_cast<Eigen::Index>(z), j)));
    }
    csv::write_row(out, cells);
  }
}

EmbeddingMatrix read_embedding(const std::filesystem::path& path, const LevelRegistry& levels) {
  const auto t = csv::read(path);
  const auto kc = t.column("level");
  std::vector<std::size_t> cols;
  EmbeddingMatrix emb;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c != kc) {
      cols.push_back(c);
      emb.feature_names.push_back(t.header[c]);
    }
  }
  const auto j = static_cast<Eigen::Index>(cols.size());
  if (j == 0) {
    throw ValidationError("embedding file " + path.string() + " has no coordinate columns");
  }
  emb.coords = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(levels.size()), j, kNaN);
  std::vector<bool> seen(levels.size(), false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto id = levels.find(t.rows[r][kc]);
    if (!id) {
      continue;
    }
    seen[*id] = true;
    for (Eigen::Index c = 0; c < j; ++c) {
      emb.coords(*id, c) =
          csv::parse_double(t.rows[r][cols[static_cast<std::size_t>(c)]], where(path, r, t.header[cols[static_cast<std::size_t>(c)]]));
    }
  }
  for (std::size_t z = 0; z < levels.size(); ++z) {
    if (!seen[z]) {
      throw ValidationError("embedding file " + path.string() + " has no row for level '" +
                            levels.key(static_cast<LevelId>(z)) + "'");
    }
  }
  emb.reduction = "loaded";
  emb.center = Eigen::VectorXd::Zero(j);
  emb.basis = Eigen::MatrixXd::Identity(j, j);
  emb.explained_variance = Eigen::VectorXd::Zero(j);
  return emb;
}

std::string fit_to_json(const FitResult& fit, const LevelRegistry& levels, int indent) {
  if (fit.num_levels() != levels.size()) {
    throw ValidationError("fit levels do not match the registry");
  }
  json j;
  j["estimator"] = fit.estimator;
  j["settings"] = fit.settings;
  j["warnings"] = fit.warnings;
  j["has_intercept"] = fit.has_intercept;
  j["alpha"] = number(fit.alpha);
  j["coef_names"] = fit.coef_names;
  j["coef"] = vector_json(fit.coef);
  j["cov"] = matrix_json(fit.cov);
  j["sigma2"] = number(fit.sigma2);
  j["df"] = fit.df;
  j["num_parameters"] = fit.num_parameters;
  j["num_observations"] = fit.num_observations;
  j["rss"] = number(fit.rss);
  j["tss"] = number(fit.tss);
  j["r_squared"] = number(fit.r_squared());
  j["adjusted_r_squared"] = number(fit.df > 0 ? fit.adjusted_r_squared() : kNaN);
  j["levels"] = levels.keys();
  j["fe"] = vector_json(fit.fe);
  j["fe_se"] = vector_json(fit.fe_se);
  json status = json::array();
  for (auto s : fit.fe_status) {
    status.push_back(std::string(to_string(s)));
  }
  j["fe_status"] = status;
  j["level_counts"] = fit.level_counts;
  if (fit.fe_cov) {
    j["fe_cov"] = {{"diag", vector_json(fit.fe_cov->diag)},
                   {"loading", matrix_json(fit.fe_cov->loading)},
                   {"core", matrix_json(fit.fe_cov->core)}};
  }
  j["residuals"] = vector_json(fit.residuals);
  return j.dump(indent) + "\n";
}

FitResult fit_from_json(const std::string& text, const LevelRegistry& levels) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("fit file is not valid JSON: ") + e.what());
  }
  try {
    FitResult fit;
    fit.estimator = j.at("estimator").get<std::string>();
    fit.settings = j.at("settings").get<std::map<std::string, std::string>>();
    fit.warnings = j.at("warnings").get<std::vector<std::string>>();
    fit.has_intercept = j.at("has_intercept").get<bool>();
    fit.alpha = number_from(j.at("alpha"));
    fit.coef_names = j.at("coef_names").get<std::vector<std::string>>();
    fit.coef = vector_from(j.at("coef"));
    fit.cov = matrix_from(j.at("cov"));
    fit.sigma2 = number_from(j.at("sigma2"));
    fit.df = j.at("df").get<long long>();
    fit.num_parameters = j.at("num_parameters").get<std::size_t>();
    fit.num_observations = j.at("num_observations").get<std::size_t>();
    fit.rss = number_from(j.at("rss"));
    fit.tss = number_from(j.at("tss"));
    fit.residuals = vector_from(j.at("residuals"));

    const auto keys = j.at("levels").get<std::vector<std::string>>();
    const auto fe = vector_from(j.at("fe"));
    const auto se = vector_from(j.at("fe_se"));
    const auto status = j.at("fe_status").get<std::vector<std::string>>();
    const auto counts = j.at("level_counts").get<std::vector<std::size_t>>();
    if (fe.size() != static_cast<Eigen::Index>(keys.size()) || se.size() != fe.size() ||
        status.size() != keys.size() || counts.size() != keys.size()) {
      throw ValidationError("fit file has inconsistent per-level arrays");
    }
    const auto l = static_cast<Eigen::Index>(levels.size());
    fit.fe = Eigen::VectorXd::Constant(l, kNaN);
    fit.fe_se = fit.fe;
    fit.fe_status.assign(levels.size(), LevelStatus::absent);
    fit.level_counts.assign(levels.size(), 0);
    std::vector<Eigen::Index> src_of(levels.size(), -1);
    for (std::size_t s = 0; s < keys.size(); ++s) {
      const auto id = levels.find(keys[s]);
      if (!id) {
        throw ValidationError("fit file level '" + keys[s] + "' is not in the data");
      }
      src_of[*id] = static_cast<Eigen::Index>(s);
      fit.fe(*id) = fe(static_cast<Eigen::Index>(s));
      fit.fe_se(*id) = se(static_cast<Eigen::Index>(s));
      fit.fe_status[*id] = level_status_from_string(status[s]);
      fit.level_counts[*id] = counts[s];
    }
    if (j.contains("fe_cov")) {
      const auto& c = j.at("fe_cov");
      const auto diag = vector_from(c.at("diag"));
      const auto core = matrix_from(c.at("core"));
      const auto loading = matrix_from(c.at("loading"), core.rows());
      FeCovariance fc;
      fc.core = core;
      fc.diag = Eigen::VectorXd::Zero(l);
      fc.loading = Eigen::MatrixXd::Zero(l, core.rows());
      for (Eigen::Index z = 0; z < l; ++z) {
        const auto s = src_of[static_cast<std::size_t>(z)];
        if (s >= 0) {
          fc.diag(z) = diag(s);
          fc.loading.row(z) = loading.row(s);
        }
      }
      fit.fe_cov = std::move(fc);
    }
    return fit;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("fit file is missing fields: ") + e.what());
  }
}

void write_fe_csv(const std::filesystem::path& path, const FitResult& fit, const LevelRegistry& levels,
                  const std::vector<bool>& significant) {
  if (fit.num_levels() != levels.size()) {
    throw ValidationError("fit levels do not match the registry");
  }
  auto out = open_out(path);
  csv::write_row(out, {"level", "fe", "se", "n", "significant", "status"});
  for (std::size_t z = 0; z < levels.size(); ++z) {
    const auto i = static_cast<Eigen::Index>(z);
    std::string sig;
    if (!significant.empty() && fit.has_fe_se(z) && fit.fe_status[z] == LevelStatus::estimated) {
      sig = significant.at(z) ? "1" : "0";
    }
    csv::write_row(out, {levels.key(static_cast<LevelId>(z)), csv::format_double(fit.fe(i)),
                         csv::format_double(fit.fe_se(i)), std::to_string(fit.level_counts[z]), sig,
                         std::string(to_string(fit.fe_status[z]))});
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot read '" + path.string() + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

}  // namespace caviar::io
