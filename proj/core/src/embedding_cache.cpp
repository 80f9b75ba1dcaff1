#include <array>
#include <cstring>
#include <fstream>

#include "caviar/embed.hpp"

namespace caviar {
namespace {

constexpr std::array<char, 8> kMagic = {'C', 'A', 'V', 'E', 'M', 'B', '\0', '\0'};

template <class T>
void put_raw(std::string& buf, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.append(p, sizeof(T));
}

template <class T>
bool get_raw(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

std::uint32_t checksum(std::string_view bytes) {
  std::uint32_t h = 0x811c9dc5u;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x01000193u;
  }
  return h;
}

std::string encode_record(const std::string& model, std::uint64_t hash, const std::vector<double>& vec) {
  std::string buf;
  put_raw(buf, static_cast<std::uint32_t>(model.size()));
  buf += model;
  put_raw(buf, hash);
  put_raw(buf, static_cast<std::uint32_t>(vec.size()));
  buf.append(reinterpret_cast<const char*>(vec.data()), vec.size() * sizeof(double));
  put_raw(buf, checksum(buf));
  return buf;
}

std::string header_bytes() {
  std::string buf(kMagic.begin(), kMagic.end());
  put_raw(buf, EmbeddingCache::kFormatVersion);
  return buf;
}

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) { load(); }

void EmbeddingCache::load() {
  std::ifstream in(*path_, std::ios::binary);
  if (!in) {
    return;  // starts empty; created on first put
  }
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  if (!in.read(magic.data(), magic.size()) || magic != kMagic || !get_raw(in, version) ||
      version != kFormatVersion) {
    // Unknown format: start over rather than misread vectors.
    dropped_ = 1;
    rewrite();
    return;
  }
  constexpr std::uint32_t kMaxModelLen = 4096;
  constexpr std::uint32_t kMaxDim = 1u << 20;
  while (in.peek() != std::char_traits<char>::eof()) {
    std::uint32_t model_len = 0, dim = 0, stored = 0;
    std::uint64_t hash = 0;
    std::string model;
    if (!get_raw(in, model_len) || model_len > kMaxModelLen) {
      ++dropped_;
      break;
    }
    model.resize(model_len);
    if (!in.read(model.data(), model_len) || !get_raw(in, hash) || !get_raw(in, dim) || dim > kMaxDim) {
      ++dropped_;
      break;
    }
    std::vector<double> vec(dim);
    if (!in.read(reinterpret_cast<char*>(vec.data()), static_cast<std::streamsize>(dim * sizeof(double))) ||
        !get_raw(in, stored)) {
      ++dropped_;
      break;
    }
    const std::string rec = encode_record(model, hash, vec);
    std::uint32_t expect = 0;
    std::memcpy(&expect, rec.data() + rec.size() - sizeof(expect), sizeof(expect));
    if (stored != expect) {
      ++dropped_;
      break;
    }
    Key key{std::move(model), hash};
    if (entries_.emplace(key, std::move(vec)).second) {
      order_.push_back(std::move(key));
    }
  }
  if (dropped_ > 0) {
    rewrite();
  }
}

void EmbeddingCache::rewrite() const {
  std::ofstream out(*path_, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write embedding cache '" + path_->string() + "'");
  }
  out << header_bytes();
  for (const auto& key : order_) {
    out << encode_record(key.model, key.hash, entries_.at(key));
  }
}

void EmbeddingCache::append(const Key& key, const std::vector<double>& vec) const {
  const bool fresh = !std::filesystem::exists(*path_) || std::filesystem::file_size(*path_) == 0;
  std::ofstream out(*path_, std::ios::binary | std::ios::app);
  if (!out) {
    throw Error("cannot write embedding cache '" + path_->string() + "'");
  }
  if (fresh) {
    out << header_bytes();
  }
  out << encode_record(key.model, key.hash, vec);
}

std::optional<std::vector<double>> EmbeddingCache::get(const std::string& model, std::string_view text) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(Key{model, content_hash(text)});
  if (it == entries_.end()) {
    return std::nullopt;
  }
  return it->second;
}

void EmbeddingCache::put(const std::string& model, std::string_view text, std::vector<double> vec) {
  std::lock_guard lock(mutex_);
  Key key{model, content_hash(text)};
  auto [it, inserted] = entries_.insert_or_assign(key, std::move(vec));
  if (inserted) {
    order_.push_back(key);
    if (path_) {
      append(key, it->second);
    }
  } else if (path_) {
    rewrite();
  }
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

}  // namespace caviar
