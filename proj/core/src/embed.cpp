#include <algorithm>
#include <cmath>
#include <future>
#include <thread>

#include <Eigen/SVD>

#include "caviar/embed.hpp"
#include "caviar/simgen.hpp"

namespace caviar {

FeatureMatrix assemble_features(const LevelAttributeTable& attrs, const Eigen::MatrixXd* text_vectors,
                                const FeatureSpec& spec) {
  const auto num_levels = attrs.values.rows();
  std::size_t text_dims = 0;
  if (spec.text_dims > 0) {
    if (text_vectors == nullptr) {
      throw ValidationError("text dimensions requested but no text vectors were supplied");
    }
    if (text_vectors->rows() != num_levels) {
      throw ValidationError("text vectors have " + std::to_string(text_vectors->rows()) + " rows, expected " +
                            std::to_string(num_levels));
    }
    if (spec.text_dims > static_cast<std::size_t>(text_vectors->cols())) {
      throw ValidationError("requested " + std::to_string(spec.text_dims) + " text dimensions but vectors have " +
                            std::to_string(text_vectors->cols()));
    }
    text_dims = spec.text_dims;
  }
  const auto width = static_cast<Eigen::Index>(spec.columns.size() + text_dims);
  if (width == 0) {
    throw ValidationError("feature spec selects no columns");
  }
  FeatureMatrix out;
  out.values.resize(num_levels, width);
  Eigen::Index c = 0;
  for (const auto& raw : spec.columns) {
    const bool descending = !raw.empty() && raw.front() == '-';
    const std::string name = descending ? raw.substr(1) : raw;
    if (!attrs.has_column(name)) {
      throw ValidationError("unknown attribute column '" + name + "'");
    }
    Eigen::VectorXd col = attrs.column(name);
    if (spec.standardize) {
      col = standardize_feature(col, descending ? Direction::descending : Direction::ascending);
    } else if (descending) {
      col = -col;
    }
    out.values.col(c++) = col;
    out.column_names.push_back(raw);
  }
  for (std::size_t k = 0; k < text_dims; ++k) {
    out.values.col(c++) = text_vectors->col(static_cast<Eigen::Index>(k));
    out.column_names.push_back("text_" + std::to_string(k));
  }
  return out;
}

EmbeddingMatrix pca_reduce(const Eigen::MatrixXd& features, std::size_t j) {
  const auto rows = features.rows();
  const auto cols = features.cols();
  if (rows < 2) {
    throw ValidationError("PCA needs at least two levels");
  }
  if (j == 0 || j > static_cast<std::size_t>(std::min(rows, cols))) {
    throw ValidationError("embedding dimension " + std::to_string(j) + " outside [1, " +
                          std::to_string(std::min(rows, cols)) + "]");
  }
  if (!features.allFinite()) {
    throw ValidationError("feature matrix contains non-finite values");
  }
  EmbeddingMatrix emb;
  emb.reduction = "pca";
  emb.center = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - emb.center.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() *
                     (s.size() > 0 ? s(0) : 0.0);
  std::size_t rank = 0;
  while (rank < static_cast<std::size_t>(s.size()) && s(static_cast<Eigen::Index>(rank)) > tol) {
    ++rank;
  }
  if (rank == 0) {
    throw ValidationError("feature matrix is constant across levels");
  }
  if (j > rank) {
    emb.warnings.push_back("requested " + std::to_string(j) + " dimensions but feature rank is " +
                           std::to_string(rank) + "; using " + std::to_string(rank));
    j = rank;
  }
  const auto jj = static_cast<Eigen::Index>(j);
  emb.basis = svd.matrixV().leftCols(jj);
  for (Eigen::Index k = 0; k < jj; ++k) {
    Eigen::Index arg = 0;
    emb.basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (emb.basis(arg, k) < 0) {
      emb.basis.col(k) *= -1.0;
    }
  }
  emb.coords = centered * emb.basis;
  emb.explained_variance = s.head(jj).array().square() / static_cast<double>(rows - 1);
  return emb;
}

EmbeddingMatrix truncate_reduce(const Eigen::MatrixXd& features, std::size_t j) {
  if (j == 0 || j > static_cast<std::size_t>(features.cols())) {
    throw ValidationError("embedding dimension " + std::to_string(j) + " outside [1, " +
                          std::to_string(features.cols()) + "]");
  }
  const auto jj = static_cast<Eigen::Index>(j);
  EmbeddingMatrix emb;
  emb.reduction = j == static_cast<std::size_t>(features.cols()) ? "identity" : "truncate";
  emb.coords = features.leftCols(jj);
  emb.center = Eigen::VectorXd::Zero(features.cols());
  emb.basis = Eigen::MatrixXd::Identity(features.cols(), jj);
  emb.explained_variance.resize(jj);
  for (Eigen::Index k = 0; k < jj; ++k) {
    const auto col = emb.coords.col(k);
    const double mean = col.mean();
    emb.explained_variance(k) =
        features.rows() > 1 ? (col.array() - mean).square().sum() / static_cast<double>(features.rows() - 1) : 0.0;
  }
  return emb;
}

Eigen::VectorXd lookup(const EmbeddingMatrix& emb, std::size_t level) {
  if (level >= emb.num_levels()) {
    throw ValidationError("level index " + std::to_string(level) + " outside embedding with " +
                          std::to_string(emb.num_levels()) + " levels");
  }
  return emb.coords.row(static_cast<Eigen::Index>(level)).transpose();
}

namespace {

std::vector<std::vector<double>> encode_with_retry(Encoder& encoder, std::span<const std::string> batch,
                                                   std::size_t first, const RetryPolicy& policy) {
  const int attempts = std::max(1, policy.max_attempts);
  std::string last_error;
  auto delay = policy.backoff_base;
  for (int a = 0; a < attempts; ++a) {
    if (a > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    try {
      auto out = encoder.encode_batch(batch);
      if (out.size() != batch.size()) {
        throw EncoderError("encoder returned " + std::to_string(out.size()) + " vectors for " +
                           std::to_string(batch.size()) + " inputs");
      }
      return out;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  throw EncoderError("batch of texts " + std::to_string(first) + ".." + std::to_string(first + batch.size() - 1) +
                     " failed after " + std::to_string(attempts) + " attempts: " + last_error);
}

}  // namespace

Eigen::MatrixXd encode_texts(std::span<const std::string> texts, Encoder& encoder, EmbeddingCache& cache,
                             const EncodeOptions& options) {
  const std::string model = encoder.model_id();
  std::vector<std::optional<std::vector<double>>> vectors(texts.size());
  std::vector<std::string> misses;
  std::vector<std::size_t> miss_first;  // first input index per unique missing text
  std::unordered_map<std::string_view, std::size_t> seen;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    vectors[i] = cache.get(model, texts[i]);
    if (!vectors[i] && seen.emplace(texts[i], misses.size()).second) {
      misses.push_back(texts[i]);
      miss_first.push_back(i);
    }
  }

  const std::size_t batch_size = std::max<std::size_t>(1, encoder.max_batch_size());
  const std::size_t in_flight = std::max<std::size_t>(1, options.max_in_flight);
  const RetryPolicy policy = encoder.retry_policy();
  std::vector<std::vector<double>> fetched(misses.size());
  const std::span<const std::string> all_misses(misses);
  for (std::size_t wave = 0; wave < misses.size(); wave += batch_size * in_flight) {
    std::vector<std::future<void>> jobs;
    for (std::size_t b = wave; b < std::min(misses.size(), wave + batch_size * in_flight); b += batch_size) {
      const std::size_t len = std::min(batch_size, misses.size() - b);
      auto job = [&, b, len] {
        auto out = encode_with_retry(encoder, all_misses.subspan(b, len), miss_first[b], policy);
        for (std::size_t k = 0; k < len; ++k) {
          cache.put(model, misses[b + k], out[k]);
          fetched[b + k] = std::move(out[k]);
        }
      };
      if (in_flight == 1) {
        job();
      } else {
        jobs.push_back(std::async(std::launch::async, job));
      }
    }
    for (auto& j : jobs) {
      j.get();
    }
  }

  std::size_t dim = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!vectors[i]) {
      vectors[i] = fetched[seen.at(texts[i])];
    }
    if (i == 0) {
      dim = vectors[i]->size();
      if (dim == 0) {
        throw EncoderError("encoder returned an empty vector");
      }
    } else if (vectors[i]->size() != dim) {
      throw EncoderError("inconsistent vector dimension for model '" + model + "': " + std::to_string(dim) +
                         " vs " + std::to_string(vectors[i]->size()) + " at text " + std::to_string(i));
    }
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(vectors[i]->data(), static_cast<Eigen::Index>(dim));
  }
  return out;
}

}  // namespace caviar
