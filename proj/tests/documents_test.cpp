#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "qfilter/documents.hpp"
#include "test_util.hpp"

namespace qfilter {
namespace {

using testing::TempDir;
using testing::write_text;

TEST(PreprocessAnchor, JoinsWithNewline) {
  EXPECT_EQ(preprocess_anchor("Q: what is 2+2?", "A: 4"), "Q: what is 2+2?\nA: 4");
  EXPECT_EQ(preprocess_anchor("", "only response"), "\nonly response");
}

TEST(PreprocessAnchor, RejectsUnknownMarker) {
  EXPECT_FALSE(preprocess_anchor("hello <unk> world", "x").has_value());
  EXPECT_FALSE(preprocess_anchor("fine", "bad <unk>").has_value());
  EXPECT_TRUE(preprocess_anchor("hello <unk> world", "x", "[UNK]").has_value());
  EXPECT_THROW(preprocess_anchor("a", "b", ""), Error);
}

TEST(ParseDocuments, ReturnsAscendingIds) {
  std::istringstream in(R"({"id": 9, "lang": "fr", "text": "neuf", "n_tokens": 1}
{"id": 2, "lang": "fr", "text": "deux", "n_tokens": 1}

{"id": 5, "lang": "fr", "n_tokens": 0}
)");
  const auto docs = parse_documents(in);
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].id, 2u);
  EXPECT_EQ(docs[1].id, 5u);
  EXPECT_EQ(docs[2].id, 9u);
  EXPECT_FALSE(docs[1].text.has_value());
  EXPECT_EQ(docs[2].text, "neuf");
}

TEST(ParseDocuments, EmptyInputGivesEmptyList) {
  std::istringstream in("");
  EXPECT_TRUE(parse_documents(in).empty());
}

TEST(ParseDocuments, DuplicateIdNamesIdAndLines) {
  std::istringstream in(R"({"id": 1, "lang": "es", "text": "a", "n_tokens": 1}
{"id": 7, "lang": "es", "text": "b", "n_tokens": 1}
{"id": 3, "lang": "es", "text": "c", "n_tokens": 1}
{"id": 4, "lang": "es", "text": "d", "n_tokens": 1}
{"id": 7, "lang": "es", "text": "e", "n_tokens": 1}
)");
  try {
    parse_documents(in);
    FAIL() << "expected integrity error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::integrity);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("7"), std::string::npos);
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("5"), std::string::npos);
  }
}

TEST(ParseDocuments, MalformedLineNamesLineNumber) {
  std::istringstream in("{\"id\": 1, \"lang\": \"es\", \"n_tokens\": 0}\n{not json\n");
  try {
    parse_documents(in);
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ParseDocuments, TextWithoutTokensIsRejected) {
  std::istringstream in(R"({"id": 1, "lang": "es", "text": "hola", "n_tokens": 0})");
  EXPECT_THROW(parse_documents(in), Error);
  std::istringstream negative(R"({"id": 1, "lang": "es", "text": "hola", "n_tokens": -3})");
  EXPECT_THROW(parse_documents(negative), Error);
}

TEST(Documents, WriteThenIngestRoundTrips) {
  TempDir dir;
  std::vector<DocumentRecord> docs = {{1, "ar", std::string("نص"), 2}, {4, "ar", std::nullopt, 0},
                                      {10, "ar", std::string("line\nbreak \"quoted\""), 3}};
  write_documents(dir / "docs.jsonl", docs);
  EXPECT_EQ(ingest_documents(dir / "docs.jsonl"), docs);
}

TEST(AnchorPool, ConcatenatesAndDropsUnknown) {
  TempDir dir;
  write_text(dir / "pool.jsonl", R"({"id": 3, "lang": "zh", "prompt": "p", "response": "r", "n_tokens": 2}
{"id": 1, "lang": "zh", "prompt": "bad <unk>", "response": "r", "n_tokens": 2}
{"id": 2, "lang": "zh", "text": "plain", "n_tokens": 1}
)");
  const auto pool = ingest_anchor_pool(dir / "pool.jsonl");
  EXPECT_EQ(pool.rejected_unk, 1u);
  ASSERT_EQ(pool.docs.size(), 2u);
  EXPECT_EQ(pool.docs[0].id, 2u);
  EXPECT_EQ(pool.docs[1].text, "p\nr");
}

}  // namespace
}  // namespace qfilter
