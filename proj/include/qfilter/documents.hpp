#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/error.hpp"

namespace qfilter {

struct DocumentRecord {
  std::uint64_t id = 0;
  std::string lang;
  std::optional<std::string> text;
  std::uint64_t n_tokens = 0;

  bool operator==(const DocumentRecord&) const = default;
};

inline constexpr std::string_view kDefaultUnkMarker = "<unk>";

// Anchor preprocessing: prompt and response joined by one newline. Returns
// nullopt when either half contains the unknown-token marker.
inline std::optional<std::string> preprocess_anchor(std::string_view prompt,
                                                    std::string_view response,
                                                    std::string_view unk_marker = kDefaultUnkMarker) {
  require(!unk_marker.empty(), ErrorKind::argument, "unk marker must be non-empty");
  if (prompt.find(unk_marker) != std::string_view::npos ||
      response.find(unk_marker) != std::string_view::npos) {
    return std::nullopt;
  }
  std::string out;
  out.reserve(prompt.size() + response.size() + 1);
  out.append(prompt);
  out.push_back('\n');
  out.append(response);
  return out;
}

namespace detail {

inline bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

inline std::uint64_t json_u64(const nlohmann::json& rec, const char* key, std::size_t line_no) {
  const auto it = rec.find(key);
  if (it == rec.end() || !it->is_number_unsigned()) {
    if (it != rec.end() && it->is_number_integer() && it->get<std::int64_t>() >= 0) {
      return it->get<std::uint64_t>();
    }
    fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": field '" + key +
                               "' missing or not a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

inline void sort_and_check_unique(std::vector<DocumentRecord>& docs,
                                  const std::vector<std::size_t>& line_of) {
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return docs[a].id < docs[b].id; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (docs[order[k]].id == docs[order[k - 1]].id) {
      fail(ErrorKind::integrity, "duplicate id " + std::to_string(docs[order[k]].id) +
                                     " on lines " + std::to_string(line_of[order[k - 1]]) +
                                     " and " + std::to_string(line_of[order[k]]));
    }
  }
  std::vector<DocumentRecord> sorted;
  sorted.reserve(docs.size());
  for (std::size_t i : order) sorted.push_back(std::move(docs[i]));
  docs = std::move(sorted);
}

}  // namespace detail

// Parses one line-delimited JSON record per line. Blank lines are ignored.
// Records come back in ascending-id order.
inline std::vector<DocumentRecord> parse_documents(std::istream& in) {
  std::vector<DocumentRecord> docs;
  std::vector<std::size_t> line_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object()) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": not an object");

    DocumentRecord doc;
    doc.id = detail::json_u64(rec, "id", line_no);
    const auto lang = rec.find("lang");
    if (lang == rec.end() || !lang->is_string()) {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": field 'lang' missing or not a string");
    }
    doc.lang = lang->get<std::string>();
    if (const auto text = rec.find("text"); text != rec.end() && !text->is_null()) {
      if (!text->is_string()) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": 'text' not a string");
      doc.text = text->get<std::string>();
    }
    doc.n_tokens = detail::json_u64(rec, "n_tokens", line_no);
    if (doc.text && !doc.text->empty() && doc.n_tokens == 0) {
      fail(ErrorKind::integrity, "line " + std::to_string(line_no) + ": non-empty text with n_tokens = 0");
    }
    docs.push_back(std::move(doc));
    line_of.push_back(line_no);
  }
  detail::sort_and_check_unique(docs, line_of);
  return docs;
}

inline std::vector<DocumentRecord> ingest_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open documents file " + path.string());
  return parse_documents(in);
}

inline nlohmann::json to_json(const DocumentRecord& doc) {
  nlohmann::json rec = {{"id", doc.id}, {"lang", doc.lang}};
  if (doc.text) rec["text"] = *doc.text;
  rec["n_tokens"] = doc.n_tokens;
  return rec;
}

inline void write_document(std::ostream& out, const DocumentRecord& doc) {
  out << to_json(doc).dump() << '\n';
}

inline void write_documents(const std::filesystem::path& path, std::span<const DocumentRecord> docs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write documents file " + path.string());
  for (const auto& doc : docs) write_document(out, doc);
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

struct AnchorIngestResult {
  std::vector<DocumentRecord> docs;
  std::size_t rejected_unk = 0;
};

// Anchor pools accept either a plain "text" field or a "prompt"/"response"
// pair. Samples containing the unknown-token marker anywhere are dropped.
inline AnchorIngestResult ingest_anchor_pool(const std::filesystem::path& path,
                                             std::string_view unk_marker = kDefaultUnkMarker) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open anchor pool " + path.string());
  AnchorIngestResult result;
  std::vector<std::size_t> line_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object()) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": not an object");
    DocumentRecord doc;
    doc.id = detail::json_u64(rec, "id", line_no);
    doc.lang = rec.value("lang", std::string{});
    doc.n_tokens = detail::json_u64(rec, "n_tokens", line_no);
    if (rec.contains("prompt") || rec.contains("response")) {
      auto joined = preprocess_anchor(rec.value("prompt", std::string{}),
                                      rec.value("response", std::string{}), unk_marker);
      if (!joined) {
        ++result.rejected_unk;
        continue;
      }
      doc.text = std::move(*joined);
    } else if (rec.contains("text") && rec["text"].is_string()) {
      doc.text = rec["text"].get<std::string>();
      if (doc.text->find(unk_marker) != std::string::npos) {
        ++result.rejected_unk;
        continue;
      }
    }
    result.docs.push_back(std::move(doc));
    line_of.push_back(line_no);
  }
  detail::sort_and_check_unique(result.docs, line_of);
  return result;
}

}  // namespace qfilter
