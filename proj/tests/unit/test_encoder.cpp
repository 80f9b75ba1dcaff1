// Eigen (through caviar headers) must precede httplib: resolv.h defines a `_res` macro.
#include <caviar/embed.hpp>

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include <gtest/gtest.h>

using namespace caviar;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "caviar_test_encoder";
  fs::create_directories(dir);
  const auto p = dir / name;
  fs::remove(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_bytes(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

/// In-process embedding endpoint: fails the first `fail_first` requests with HTTP 500.
class FakeServer {
 public:
  explicit FakeServer(int fail_first = 0, std::size_t dim = 4) : fail_first_(fail_first), dim_(dim) {
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests_;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        auth_ = req.get_header_value("Authorization");
      }
      if (n <= fail_first_) {
        res.status = 500;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json out;
      out["data"] = nlohmann::json::array();
      const auto input = body.at("input");
      batch_sizes_max_ = std::max<std::size_t>(batch_sizes_max_, input.size());
      // Reverse order with explicit indices, as some services do.
      for (std::size_t i = input.size(); i-- > 0;) {
        std::vector<double> v(dim_);
        const auto& text = input[i].get_ref<const std::string&>();
        for (std::size_t k = 0; k < dim_; ++k) {
          v[k] = static_cast<double>(text.size()) + 0.25 * static_cast<double>(k);
        }
        out["data"].push_back({{"index", i}, {"embedding", v}});
      }
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/embeddings"; }
  int requests() const { return requests_; }
  std::size_t max_batch_seen() const { return batch_sizes_max_; }
  std::string auth() {
    std::lock_guard<std::mutex> lock(mutex_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int fail_first_;
  std::size_t dim_;
  std::atomic<int> requests_{0};
  std::atomic<std::size_t> batch_sizes_max_{0};
  std::mutex mutex_;
  std::string auth_;
};

HttpEncoderConfig fast_config(const std::string& endpoint) {
  HttpEncoderConfig c;
  c.endpoint = endpoint;
  c.model = "fake-model";
  c.timeout = std::chrono::milliseconds(5000);
  c.max_batch = 3;
  c.retry.max_attempts = 3;
  c.retry.backoff_base = std::chrono::milliseconds(1);
  c.api_key_env = "CAVIAR_TEST_ENCODER_KEY";
  return c;
}

}  // namespace

TEST(MockEncoder, DeterministicUnitVectors) {
  MockEncoder a(32), b(32);
  const auto va = a.encode_one("zip 02139");
  const auto vb = b.encode_one("zip 02139");
  EXPECT_TRUE(same_bytes(va, vb));
  double norm = 0.0;
  for (double x : va) norm += x * x;
  EXPECT_NEAR(norm, 1.0, 1e-12);
  EXPECT_FALSE(same_bytes(va, a.encode_one("zip 02140")));
  MockEncoder other(32, "other-model");
  EXPECT_FALSE(same_bytes(va, other.encode_one("zip 02139")));
}

TEST(MockEncoder, BatchMatchesSingleAndCountsCalls) {
  MockEncoder m(8);
  const std::vector<std::string> texts{"a", "b", "c"};
  const auto out = m.encode_batch(texts);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_TRUE(same_bytes(out[1], m.encode_one("b")));
  EXPECT_EQ(m.calls(), 1u);
}

TEST(EmbeddingCache, RoundTripIsByteIdentical) {
  const auto path = temp_file("roundtrip.cache");
  MockEncoder m(16);
  {
    EmbeddingCache c(path);
    c.put("mock-encoder", "alpha", m.encode_one("alpha"));
    c.put("mock-encoder", "beta", m.encode_one("beta"));
  }
  EmbeddingCache c(path);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.dropped_records(), 0u);
  const auto got = c.get("mock-encoder", "alpha");
  ASSERT_TRUE(got.has_value());
  EXPECT_TRUE(same_bytes(*got, m.encode_one("alpha")));
  EXPECT_FALSE(c.get("other-model", "alpha").has_value());
}

TEST(EmbeddingCache, OverwriteKeepsOneEntry) {
  const auto path = temp_file("overwrite.cache");
  {
    EmbeddingCache c(path);
    c.put("m", "t", {1.0, 2.0});
    c.put("m", "t", {3.0, 4.0});
  }
  EmbeddingCache c(path);
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(*c.get("m", "t"), (std::vector<double>{3.0, 4.0}));
}

TEST(EmbeddingCache, TruncatedTailIsDroppedAndRewritten) {
  const auto path = temp_file("truncated.cache");
  {
    EmbeddingCache c(path);
    for (int i = 0; i < 5; ++i) c.put("m", "text" + std::to_string(i), {double(i), double(i) + 0.5});
  }
  const auto full = slurp(path);
  fs::resize_file(path, full.size() - 7);
  {
    EmbeddingCache c(path);
    EXPECT_EQ(c.size(), 4u);
    EXPECT_EQ(c.dropped_records(), 1u);
    EXPECT_FALSE(c.get("m", "text4").has_value());
  }
  EmbeddingCache clean(path);
  EXPECT_EQ(clean.dropped_records(), 0u);
  EXPECT_EQ(clean.size(), 4u);
}

TEST(EmbeddingCache, FlippedByteEndsReadablePrefix) {
  const auto path = temp_file("flipped.cache");
  {
    EmbeddingCache c(path);
    for (int i = 0; i < 4; ++i) c.put("m", "t" + std::to_string(i), {1.0, 2.0, 3.0});
  }
  auto bytes = slurp(path);
  // Inside the payload of the third record.
  const std::size_t header = 12, record = 4 + 1 + 8 + 4 + 3 * 8 + 4;
  bytes[header + 2 * record + 20] ^= 0x5a;
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  EmbeddingCache c(path);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.dropped_records(), 1u);
}

TEST(EmbeddingCache, UnknownHeaderStartsEmpty) {
  const auto path = temp_file("header.cache");
  std::ofstream(path, std::ios::binary) << "NOTACACHEFILE";
  EmbeddingCache c(path);
  EXPECT_EQ(c.size(), 0u);
  EXPECT_EQ(c.dropped_records(), 1u);
  c.put("m", "x", {1.0});
  EmbeddingCache again(path);
  EXPECT_EQ(again.size(), 1u);
}

TEST(EncodeTexts, CacheHitsIssueNoCalls) {
  MockEncoder m(8, "mock-encoder", 2);
  EmbeddingCache cache;
  const std::vector<std::string> texts{"a", "b", "a", "c", "d"};
  const auto first = encode_texts(texts, m, cache);
  EXPECT_EQ(m.calls(), 2u);  // 4 unique texts in batches of 2
  EXPECT_EQ(cache.size(), 4u);
  EXPECT_TRUE(first.row(0) == first.row(2));
  const auto second = encode_texts(texts, m, cache);
  EXPECT_EQ(m.calls(), 2u);
  EXPECT_TRUE(first == second);
}

TEST(EncodeTexts, ParallelWavesMatchSerial) {
  std::vector<std::string> texts;
  for (int i = 0; i < 50; ++i) texts.push_back("level " + std::to_string(i));
  MockEncoder a(6, "mock-encoder", 4), b(6, "mock-encoder", 4);
  EmbeddingCache ca, cb;
  EXPECT_TRUE(encode_texts(texts, a, ca) == encode_texts(texts, b, cb, {4}));
}

TEST(HttpEncoder, RequestAndResponseSchemas) {
  const std::vector<std::string> texts{"x", "y"};
  const auto req = nlohmann::json::parse(make_encoder_request("m1", texts));
  EXPECT_EQ(req.at("model"), "m1");
  EXPECT_EQ(req.at("input").size(), 2u);
  const auto openai = parse_encoder_response(
      R"({"data":[{"index":1,"embedding":[2.0]},{"index":0,"embedding":[1.0]}]})", ResponseSchema::openai, 2);
  EXPECT_EQ(openai[0][0], 1.0);
  EXPECT_EQ(openai[1][0], 2.0);
  const auto plain = parse_encoder_response(R"({"embeddings":[[1,2],[3,4]]})", ResponseSchema::plain, 2);
  EXPECT_EQ(plain[1][1], 4.0);
  EXPECT_THROW(parse_encoder_response("not json", ResponseSchema::plain, 1), EncoderError);
  EXPECT_THROW(parse_encoder_response(R"({"embeddings":[[1]]})", ResponseSchema::plain, 2), EncoderError);
  EXPECT_THROW(parse_encoder_response(R"({"data":[{"index":5,"embedding":[1]}]})", ResponseSchema::openai, 1),
               EncoderError);
}

TEST(HttpEncoder, BatchesAndSendsKey) {
  FakeServer server;
  setenv("CAVIAR_TEST_ENCODER_KEY", "secret-token", 1);
  HttpEncoder enc(fast_config(server.endpoint()));
  EmbeddingCache cache;
  const std::vector<std::string> texts{"a", "bb", "ccc", "dddd", "eeeee", "a"};
  const auto m = encode_texts(texts, enc, cache);
  EXPECT_EQ(server.requests(), 2);  // 5 unique texts, batches of 3
  EXPECT_LE(server.max_batch_seen(), 3u);
  EXPECT_EQ(server.auth(), "Bearer secret-token");
  EXPECT_EQ(m(2, 0), 3.0);
  EXPECT_EQ(m(2, 1), 3.25);
  EXPECT_TRUE(m.row(0) == m.row(5));
  unsetenv("CAVIAR_TEST_ENCODER_KEY");
}

TEST(HttpEncoder, RetriesTransientFailures) {
  FakeServer server(2);
  HttpEncoder enc(fast_config(server.endpoint()));
  EmbeddingCache cache;
  const std::vector<std::string> texts{"a", "b"};
  const auto m = encode_texts(texts, enc, cache);
  EXPECT_EQ(server.requests(), 3);
  EXPECT_EQ(m.rows(), 2);
}

TEST(HttpEncoder, SurfacesPersistentFailure) {
  FakeServer server(100);
  HttpEncoder enc(fast_config(server.endpoint()));
  EmbeddingCache cache;
  const std::vector<std::string> texts{"a", "b", "c", "d"};
  try {
    encode_texts(texts, enc, cache);
    FAIL() << "expected EncoderError";
  } catch (const EncoderError& e) {
    EXPECT_NE(std::string(e.what()).find("texts 0..2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("HTTP 500"), std::string::npos) << e.what();
  }
  EXPECT_EQ(server.requests(), 3);
  EXPECT_EQ(cache.size(), 0u);
}

TEST(HttpEncoder, UnreachableEndpoint) {
  auto cfg = fast_config("http://127.0.0.1:1/v1/embeddings");
  cfg.retry.max_attempts = 1;
  cfg.timeout = std::chrono::milliseconds(500);
  HttpEncoder enc(cfg);
  const std::vector<std::string> texts{"a"};
  EXPECT_THROW(enc.encode_batch(texts), EncoderError);
  auto bad = fast_config("ftp://example.com/x");
  EXPECT_THROW(HttpEncoder(bad).encode_batch(texts), ValidationError);
}

TEST(EncodeTexts, InconsistentDimensionIsAnError) {
  class Uneven : public Encoder {
   public:
    std::string model_id() const override { return "uneven"; }
    std::vector<std::vector<double>> encode_batch(std::span<const std::string> texts) override {
      std::vector<std::vector<double>> out;
      for (const auto& t : texts) out.emplace_back(t.size(), 1.0);
      return out;
    }
  } enc;
  EmbeddingCache cache;
  const std::vector<std::string> texts{"a", "bb"};
  EXPECT_THROW(encode_texts(texts, enc, cache), EncoderError);
}
