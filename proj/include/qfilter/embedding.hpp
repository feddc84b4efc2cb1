#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qfilter/documents.hpp"
#include "qfilter/error.hpp"
#include "qfilter/random.hpp"

namespace qfilter {

inline constexpr std::size_t kDefaultEmbeddingDim = 768;

// Dense float32 rows keyed by ascending document id.
struct EmbeddingMatrix {
  std::size_t dim = kDefaultEmbeddingDim;
  std::vector<std::uint64_t> ids;
  std::vector<float> data;

  std::size_t rows() const { return ids.size(); }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data).subspan(i * dim, dim);
  }
  std::span<float> row(std::size_t i) { return std::span<float>(data).subspan(i * dim, dim); }

  std::optional<std::size_t> find(std::uint64_t id) const {
    const auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
  }

  bool operator==(const EmbeddingMatrix& other) const {
    if (dim != other.dim || ids != other.ids || data.size() != other.data.size()) return false;
    return data.empty() ||
           std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0;
  }
};

inline void validate(const EmbeddingMatrix& m) {
  require(m.dim >= 1, ErrorKind::shape, "embedding dim must be positive");
  require(m.data.size() == m.ids.size() * m.dim, ErrorKind::shape,
          "embedding payload has " + std::to_string(m.data.size()) + " values, expected " +
              std::to_string(m.ids.size() * m.dim));
  for (std::size_t i = 1; i < m.ids.size(); ++i) {
    require(m.ids[i - 1] < m.ids[i], ErrorKind::integrity,
            "embedding ids not strictly ascending at row " + std::to_string(i));
  }
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    require(std::isfinite(m.data[i]), ErrorKind::integrity,
            "non-finite embedding value in row " + std::to_string(i / m.dim));
  }
}

// Deterministic stand-in for an encoder. Component i is a counter-based draw
// keyed on (fnv1a(text), seed, i), mapped onto [-1, 1].
inline std::vector<float> mock_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
  require(dim >= 1, ErrorKind::argument, "mock_embed: dim must be >= 1");
  const std::uint64_t key = mix64(fnv1a64(text) ^ mix64(seed));
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const std::uint64_t bits = mix64(key + 0x9e3779b97f4a7c15ULL * (i + 1));
    // 24 bits keep the float conversion exact.
    const double u = static_cast<double>(bits >> 40) * 0x1.0p-24;
    out[i] = static_cast<float>(2.0 * u - 1.0);
  }
  return out;
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool deterministic() const = 0;
  virtual std::vector<float> embed(std::string_view text) const = 0;
};

class MockEmbeddingProvider final : public EmbeddingProvider {
 public:
  MockEmbeddingProvider(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    require(dim >= 1, ErrorKind::argument, "provider dim must be >= 1");
  }
  std::string name() const override { return "mock"; }
  std::size_t dim() const override { return dim_; }
  bool deterministic() const override { return true; }
  std::vector<float> embed(std::string_view text) const override {
    return mock_embed(text, dim_, seed_);
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Documents without text embed as the empty string.
inline EmbeddingMatrix embed_documents(std::span<const DocumentRecord> docs,
                                       const EmbeddingProvider& provider) {
  EmbeddingMatrix m;
  m.dim = provider.dim();
  m.ids.reserve(docs.size());
  m.data.reserve(docs.size() * m.dim);
  for (const auto& doc : docs) {
    const auto v = provider.embed(doc.text ? std::string_view(*doc.text) : std::string_view{});
    require(v.size() == m.dim, ErrorKind::shape, "provider returned wrong dimension");
    m.ids.push_back(doc.id);
    m.data.insert(m.data.end(), v.begin(), v.end());
  }
  validate(m);
  return m;
}

// --- binary format -------------------------------------------------------
//
//   "EMB1" | u32 version | u32 dim | u64 count | count x u64 ids
//   | count*dim x f32 payload | u64 fnv1a(payload bytes)
//
// All integers and floats little-endian.

inline constexpr std::array<char, 4> kEmbeddingMagic = {'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  buf.insert(buf.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_all(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace detail

inline std::vector<unsigned char> encode_embeddings(const EmbeddingMatrix& m) {
  validate(m);
  std::vector<unsigned char> buf;
  buf.reserve(20 + m.ids.size() * 8 + m.data.size() * 4 + 8);
  buf.insert(buf.end(), kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  detail::put_le<std::uint32_t>(buf, kEmbeddingVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.dim));
  detail::put_le<std::uint64_t>(buf, m.ids.size());
  for (auto id : m.ids) detail::put_le<std::uint64_t>(buf, id);
  const std::size_t payload_start = buf.size();
  for (float v : m.data) detail::put_le<float>(buf, v);
  const auto checksum = fnv1a64(std::span<const unsigned char>(buf).subspan(payload_start));
  detail::put_le<std::uint64_t>(buf, checksum);
  return buf;
}

inline EmbeddingMatrix decode_embeddings(std::span<const unsigned char> buf) {
  constexpr std::size_t header = 4 + 4 + 4 + 8;
  if (buf.size() < 4 || !std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(), buf.begin())) {
    fail(ErrorKind::format, "bad embedding file magic");
  }
  if (buf.size() < header) fail(ErrorKind::corruption, "embedding file truncated in header");
  const auto version = detail::get_le<std::uint32_t>(buf.data() + 4);
  if (version != kEmbeddingVersion) {
    fail(ErrorKind::format, "unsupported embedding file version " + std::to_string(version));
  }
  EmbeddingMatrix m;
  m.dim = detail::get_le<std::uint32_t>(buf.data() + 8);
  const auto count = detail::get_le<std::uint64_t>(buf.data() + 12);
  if (m.dim == 0) fail(ErrorKind::format, "embedding file declares dim = 0");

  // Guard the size arithmetic before trusting count.
  const std::size_t remaining = buf.size() - header;
  const std::size_t row_bytes = 8 + 4 * static_cast<std::size_t>(m.dim);
  if (count > remaining / row_bytes) {
    fail(ErrorKind::corruption, "embedding file truncated: declares " + std::to_string(count) +
                                    " rows of dim " + std::to_string(m.dim));
  }
  const std::size_t expected = header + count * row_bytes + 8;
  if (buf.size() != expected) {
    fail(ErrorKind::corruption, "embedding file size " + std::to_string(buf.size()) +
                                    " does not match declared shape (" + std::to_string(expected) + ")");
  }
  const unsigned char* p = buf.data() + header;
  m.ids.resize(count);
  for (std::size_t i = 0; i < count; ++i, p += 8) m.ids[i] = detail::get_le<std::uint64_t>(p);
  const std::size_t payload_bytes = count * m.dim * 4;
  const auto stored = detail::get_le<std::uint64_t>(p + payload_bytes);
  if (fnv1a64(std::span<const unsigned char>(p, payload_bytes)) != stored) {
    fail(ErrorKind::corruption, "embedding payload checksum mismatch");
  }
  m.data.resize(count * m.dim);
  for (std::size_t i = 0; i < m.data.size(); ++i, p += 4) m.data[i] = detail::get_le<float>(p);
  validate(m);
  return m;
}

inline void store_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  detail::write_all(path, encode_embeddings(m));
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(detail::read_all(path));
}

}  // namespace qfilter
