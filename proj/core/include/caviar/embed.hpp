#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "caviar/domain.hpp"

namespace caviar {

/// Raised when the encoder cannot produce vectors for a batch.
class EncoderError : public Error {
 public:
  using Error::Error;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{200};  // doubled after each failed attempt
};

/// A text encoder. Implementations must return vectors of one fixed dimension per model id.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::string model_id() const = 0;
  virtual std::size_t max_batch_size() const { return 64; }
  virtual RetryPolicy retry_policy() const { return {}; }
  virtual std::vector<std::vector<double>> encode_batch(std::span<const std::string> texts) = 0;
};

/// Deterministic stand-in: each text maps to a hash-seeded pseudo-random unit vector.
class MockEncoder : public Encoder {
 public:
  explicit MockEncoder(std::size_t dim = 256, std::string model = "mock-encoder", std::size_t max_batch = 64);

  std::string model_id() const override { return model_; }
  std::size_t max_batch_size() const override { return max_batch_; }
  std::vector<std::vector<double>> encode_batch(std::span<const std::string> texts) override;

  std::vector<double> encode_one(const std::string& text) const;
  std::size_t calls() const { return calls_; }

 private:
  std::size_t dim_;
  std::string model_;
  std::size_t max_batch_;
  std::atomic<std::size_t> calls_{0};
};

enum class ResponseSchema {
  openai,  // {"data": [{"embedding": [...]}, ...]}
  plain,   // {"embeddings": [[...], ...]}
};

struct HttpEncoderConfig {
  std::string endpoint = "https://api.openai.com/v1/embeddings";
  std::string model = "text-embedding-3-large";
  std::chrono::milliseconds timeout{30000};
  std::size_t max_batch = 64;
  RetryPolicy retry;
  std::string api_key_env = "CAVIAR_ENCODER_API_KEY";
  ResponseSchema schema = ResponseSchema::openai;
};

/// POSTs {"model": ..., "input": [...]} and parses one vector per input.
class HttpEncoder : public Encoder {
 public:
  explicit HttpEncoder(HttpEncoderConfig config);

  std::string model_id() const override { return config_.model; }
  std::size_t max_batch_size() const override { return config_.max_batch; }
  RetryPolicy retry_policy() const override { return config_.retry; }
  std::vector<std::vector<double>> encode_batch(std::span<const std::string> texts) override;

  const HttpEncoderConfig& config() const { return config_; }

 private:
  HttpEncoderConfig config_;
};

/// Parses an encoder response body; exposed for adapters and tests.
std::vector<std::vector<double>> parse_encoder_response(const std::string& body, ResponseSchema schema,
                                                        std::size_t expected);
std::string make_encoder_request(const std::string& model, std::span<const std::string> texts);

std::uint64_t content_hash(std::string_view text);

/**
 * On-disk vector cache keyed by (model id, content hash). File layout:
 *   "CAVEMB\0\0" magic, u32 format version, then records of
 *   u32 model length, model bytes, u64 text hash, u32 dim, dim x f64, u32 checksum.
 * A corrupt or truncated record ends the readable prefix; it is dropped and the
 * entry is re-fetched on the next encode.
 */
class EmbeddingCache {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  EmbeddingCache() = default;  // in-memory only
  explicit EmbeddingCache(std::filesystem::path path);

  std::optional<std::vector<double>> get(const std::string& model, std::string_view text) const;
  void put(const std::string& model, std::string_view text, std::vector<double> vec);

  std::size_t size() const;
  std::size_t dropped_records() const { return dropped_; }
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  struct Key {
    std::string model;
    std::uint64_t hash;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<std::string>{}(k.model) ^ (k.hash * 0x9E3779B97F4A7C15ull);
    }
  };

  void load();
  void rewrite() const;
  void append(const Key& key, const std::vector<double>& vec) const;

  std::optional<std::filesystem::path> path_;
  std::unordered_map<Key, std::vector<double>, KeyHash> entries_;
  std::vector<Key> order_;
  std::size_t dropped_ = 0;
  mutable std::mutex mutex_;
};

struct EncodeOptions {
  std::size_t max_in_flight = 1;
};

/// One row per text. Cache hits never reach the encoder.
Eigen::MatrixXd encode_texts(std::span<const std::string> texts, Encoder& encoder, EmbeddingCache& cache,
                             const EncodeOptions& options = {});

/// Column selection for the pre-PCA feature matrix. A leading '-' on a column
/// name selects the descending standardization ((max - v) / sd).
struct FeatureSpec {
  std::vector<std::string> columns;
  bool standardize = true;
  std::size_t text_dims = 0;  // leading text-encoder dimensions to append
};

struct FeatureMatrix {
  Eigen::MatrixXd values;  // L x D
  std::vector<std::string> column_names;
};

FeatureMatrix assemble_features(const LevelAttributeTable& attrs, const Eigen::MatrixXd* text_vectors,
                                const FeatureSpec& spec);

/// Level coordinates in the reduced space: coords.row(l) = (feature_l - center) * basis.
struct EmbeddingMatrix {
  Eigen::MatrixXd coords;               // L x J
  Eigen::VectorXd center;               // D
  Eigen::MatrixXd basis;                // D x J, orthonormal columns
  Eigen::VectorXd explained_variance;   // J, nonincreasing for PCA
  std::vector<std::string> feature_names;
  std::string reduction;                // "pca", "truncate" or "identity"
  std::vector<std::string> warnings;

  std::size_t num_levels() const { return static_cast<std::size_t>(coords.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(coords.cols()); }
};

/// Column-centered SVD; keeps the top-J right singular directions. The largest-magnitude
/// entry of every basis column is made positive.
EmbeddingMatrix pca_reduce(const Eigen::MatrixXd& features, std::size_t j);

/// Keeps the first J feature columns unchanged (no centering).
EmbeddingMatrix truncate_reduce(const Eigen::MatrixXd& features, std::size_t j);

Eigen::VectorXd lookup(const EmbeddingMatrix& emb, std::size_t level);

}  // namespace caviar
