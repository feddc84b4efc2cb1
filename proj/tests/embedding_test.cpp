#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "qfilter/embedding.hpp"
#include "test_util.hpp"

namespace qfilter {
namespace {

using testing::kind_of;
using testing::TempDir;

EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m;
  m.dim = dim;
  std::uint64_t id = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    id += 1 + rng.below(5);
    m.ids.push_back(id);
    for (std::size_t c = 0; c < dim; ++c) m.data.push_back(static_cast<float>(rng.normal()));
  }
  return m;
}

std::string random_text(Rng& rng, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>('a' + rng.below(26)));
  return s;
}

TEST(MockEmbed, DeterministicAndBounded) {
  const auto a = mock_embed("bonjour", 4, 1);
  const auto b = mock_embed("bonjour", 4, 1);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
  for (float v : a) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(kind_of([] { mock_embed("x", 0, 1); }), ErrorKind::argument);
}

TEST(MockEmbed, OneCharacterChangeChangesVector) {
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    std::string a = random_text(rng, 1 + rng.below(40));
    std::string b = a;
    const auto pos = rng.below(b.size());
    b[pos] = static_cast<char>(b[pos] == 'z' ? 'a' : b[pos] + 1);
    EXPECT_NE(mock_embed(a, 16, 7), mock_embed(b, 16, 7)) << a << " vs " << b;
  }
}

TEST(MockEmbed, SeedsDivergeOnAlmostEveryText) {
  Rng rng(1234);
  int differing = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto text = random_text(rng, 1 + rng.below(60));
    differing += mock_embed(text, 8, 1) != mock_embed(text, 8, 2) ? 1 : 0;
  }
  EXPECT_GE(differing, 990);
}

TEST(EmbeddingFile, RoundTripIsBitwise) {
  TempDir dir;
  const auto m = random_matrix(10, 8, 5);
  store_embeddings(m, dir / "m.emb");
  EXPECT_EQ(load_embeddings(dir / "m.emb"), m);
}

TEST(EmbeddingFile, RoundTripPropertyOverShapes) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    const auto m = random_matrix(rng.below(40), 1 + rng.below(33), seed);
    EXPECT_EQ(decode_embeddings(encode_embeddings(m)), m);
  }
}

TEST(EmbeddingFile, EmptyMatrixIsValid) {
  TempDir dir;
  EmbeddingMatrix m;
  m.dim = 768;
  store_embeddings(m, dir / "empty.emb");
  const auto back = load_embeddings(dir / "empty.emb");
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.dim, 768u);
}

TEST(EmbeddingFile, FlippedPayloadByteIsCorruption) {
  auto buf = encode_embeddings(random_matrix(4, 8, 2));
  buf[20 + 4 * 8 + 3] ^= 0x10;
  EXPECT_EQ(kind_of([&] { decode_embeddings(buf); }), ErrorKind::corruption);
}

TEST(EmbeddingFile, WrongMagicIsFormatError) {
  auto buf = encode_embeddings(random_matrix(2, 3, 2));
  buf[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_embeddings(buf); }), ErrorKind::format);
  auto versioned = encode_embeddings(random_matrix(2, 3, 2));
  versioned[4] = 2;
  EXPECT_EQ(kind_of([&] { decode_embeddings(versioned); }), ErrorKind::format);
}

TEST(EmbeddingFile, TruncatedPayloadIsCorruption) {
  auto buf = encode_embeddings(random_matrix(3, 768, 4));
  buf.resize(buf.size() - 100);
  EXPECT_EQ(kind_of([&] { decode_embeddings(buf); }), ErrorKind::corruption);
  buf.resize(10);
  EXPECT_EQ(kind_of([&] { decode_embeddings(buf); }), ErrorKind::corruption);
}

TEST(EmbeddingFile, NanWithValidChecksumIsIntegrityError) {
  auto m = random_matrix(2, 3, 1);
  // Build the file by hand so the NaN slips past the writer's validation.
  std::vector<unsigned char> buf(kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  detail::put_le<std::uint32_t>(buf, 1);
  detail::put_le<std::uint32_t>(buf, 3);
  detail::put_le<std::uint64_t>(buf, 2);
  for (auto id : m.ids) detail::put_le<std::uint64_t>(buf, id);
  const auto start = buf.size();
  m.data[4] = std::numeric_limits<float>::quiet_NaN();
  for (float v : m.data) detail::put_le<float>(buf, v);
  detail::put_le<std::uint64_t>(buf, fnv1a64(std::span<const unsigned char>(buf).subspan(start)));
  EXPECT_EQ(kind_of([&] { decode_embeddings(buf); }), ErrorKind::integrity);
}

TEST(EmbeddingMatrix, ValidateRejectsUnsortedIds) {
  auto m = random_matrix(3, 2, 3);
  std::swap(m.ids[0], m.ids[2]);
  EXPECT_EQ(kind_of([&] { validate(m); }), ErrorKind::integrity);
  auto short_rows = random_matrix(3, 2, 3);
  short_rows.data.pop_back();
  EXPECT_EQ(kind_of([&] { validate(short_rows); }), ErrorKind::shape);
}

TEST(EmbedDocuments, UsesProviderPerDocument) {
  const MockEmbeddingProvider provider(6, 11);
  const std::vector<DocumentRecord> docs = {{1, "fr", std::string("un"), 1}, {2, "fr", std::nullopt, 0}};
  const auto m = embed_documents(docs, provider);
  ASSERT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.dim, 6u);
  const auto first = mock_embed("un", 6, 11);
  EXPECT_TRUE(std::equal(first.begin(), first.end(), m.row(0).begin()));
  const auto second = mock_embed("", 6, 11);
  EXPECT_TRUE(std::equal(second.begin(), second.end(), m.row(1).begin()));
}

}  // namespace
}  // namespace qfilter
