#include "caviar/embed.hpp"
#include "caviar/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <regex>

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen parameter names.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

namespace caviar {

std::uint64_t content_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

MockEncoder::MockEncoder(std::size_t dim, std::string model, std::size_t max_batch)
    : dim_(dim), model_(std::move(model)), max_batch_(std::max<std::size_t>(1, max_batch)) {
  if (dim_ == 0) {
    throw ValidationError("mock encoder dimension must be positive");
  }
}

std::vector<double> MockEncoder::encode_one(const std::string& text) const {
  std::string seed_text = model_;
  seed_text.push_back('\0');
  seed_text += text;
  const Philox rng(content_hash(seed_text), Stream::mock_encoder);
  std::vector<double> v(dim_);
  double norm = 0.0;
  for (std::size_t k = 0; k < dim_; ++k) {
    v[k] = rng.normal(k);
    norm += v[k] * v[k];
  }
  norm = std::sqrt(norm);
  for (auto& x : v) {
    x /= norm;
  }
  return v;
}

std::vector<std::vector<double>> MockEncoder::encode_batch(std::span<const std::string> texts) {
  ++calls_;
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    out.push_back(encode_one(t));
  }
  return out;
}

std::string make_encoder_request(const std::string& model, std::span<const std::string> texts) {
  nlohmann::json body;
  body["model"] = model;
  body["input"] = std::vector<std::string>(texts.begin(), texts.end());
  return body.dump();
}

std::vector<std::vector<double>> parse_encoder_response(const std::string& body, ResponseSchema schema,
                                                        std::size_t expected) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw EncoderError(std::string("encoder response is not valid JSON: ") + e.what());
  }
  std::vector<std::vector<double>> out;
  try {
    if (schema == ResponseSchema::openai) {
      const auto& data = doc.at("data");
      out.resize(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& item = data[i];
        const std::size_t slot = item.contains("index") ? item.at("index").get<std::size_t>() : i;
        if (slot >= out.size()) {
          throw EncoderError("encoder response index out of range");
        }
        out[slot] = item.at("embedding").get<std::vector<double>>();
      }
    } else {
      out = doc.at("embeddings").get<std::vector<std::vector<double>>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw EncoderError(std::string("unexpected encoder response shape: ") + e.what());
  }
  if (out.size() != expected) {
    throw EncoderError("encoder returned " + std::to_string(out.size()) + " vectors for " +
                       std::to_string(expected) + " inputs");
  }
  return out;
}

HttpEncoder::HttpEncoder(HttpEncoderConfig config) : config_(std::move(config)) {
  if (config_.max_batch == 0) {
    throw ValidationError("encoder max_batch must be positive");
  }
}

std::vector<std::vector<double>> HttpEncoder::encode_batch(std::span<const std::string> texts) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url_re)) {
    throw ValidationError("encoder endpoint must be an http(s) URL: " + config_.endpoint);
  }
  const std::string origin = m[1];
  const std::string path = m[2].matched ? std::string(m[2]) : "/";

  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = client.Post(path, headers, make_encoder_request(config_.model, texts), "application/json");
  if (!res) {
    throw EncoderError("encoder request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw EncoderError("encoder returned HTTP " + std::to_string(res->status));
  }
  return parse_encoder_response(res->body, config_.schema, texts.size());
}

}  // namespace caviar
