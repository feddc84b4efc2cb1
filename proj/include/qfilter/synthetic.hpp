#pragma once

// Desk-scale synthetic corpora with planted quality strata. Used by the test
// suites and by the `synth` CLI subcommand to stand in for real web corpora.

#include <cstdint>
#include <string>
#include <vector>

#include "qfilter/documents.hpp"
#include "qfilter/embedding.hpp"
#include "qfilter/error.hpp"
#include "qfilter/random.hpp"

namespace qfilter::synth {

enum class Stratum : int { junk = 0, fluent = 1, high_quality = 2 };

inline const char* to_string(Stratum s) {
  switch (s) {
    case Stratum::junk: return "junk";
    case Stratum::fluent: return "fluent";
    case Stratum::high_quality: return "high_quality";
  }
  return "?";
}

struct CorpusSpec {
  std::string lang = "xx";
  std::size_t dim = 16;
  std::size_t n_docs = 1000;
  double frac_high_quality = 0.15;
  double frac_fluent = 0.35;  // the rest is junk
  double offset = 2.0;        // per-dimension mean shift of each planted signal
  double noise = 1.0;
  std::uint64_t first_id = 1;
  std::uint64_t seed = 0;
  bool with_text = true;
};

struct Corpus {
  std::vector<DocumentRecord> docs;
  EmbeddingMatrix embeddings;
  std::vector<Stratum> strata;
};

// Signal layout over the first half of the dimensions, quarter blocks:
//   block A (fluency):  +offset for fluent and high-quality, -offset for junk
//   block B (utility):  +offset for high-quality only
inline std::vector<double> stratum_mean(Stratum s, std::size_t dim, double offset) {
  std::vector<double> mean(dim, 0.0);
  const std::size_t q = std::max<std::size_t>(1, dim / 4);
  for (std::size_t i = 0; i < q && i < dim; ++i) mean[i] = s == Stratum::junk ? -offset : offset;
  if (s == Stratum::high_quality) {
    for (std::size_t i = q; i < 2 * q && i < dim; ++i) mean[i] = offset;
  }
  return mean;
}

inline Corpus make_corpus(const CorpusSpec& spec) {
  require(spec.dim >= 2, ErrorKind::argument, "synthetic dim must be >= 2");
  require(spec.frac_high_quality >= 0 && spec.frac_fluent >= 0 && spec.frac_high_quality + spec.frac_fluent <= 1.0,
          ErrorKind::argument, "stratum fractions must be non-negative and sum to <= 1");
  Rng rng(derive_seed(spec.seed, "synthetic-corpus"));
  Corpus c;
  c.embeddings.dim = spec.dim;
  c.docs.reserve(spec.n_docs);
  c.embeddings.ids.reserve(spec.n_docs);
  c.embeddings.data.reserve(spec.n_docs * spec.dim);
  const auto n_hq = static_cast<std::size_t>(spec.frac_high_quality * static_cast<double>(spec.n_docs));
  const auto n_fluent = static_cast<std::size_t>(spec.frac_fluent * static_cast<double>(spec.n_docs));
  const std::vector<std::vector<double>> means = {stratum_mean(Stratum::junk, spec.dim, spec.offset),
                                                  stratum_mean(Stratum::fluent, spec.dim, spec.offset),
                                                  stratum_mean(Stratum::high_quality, spec.dim, spec.offset)};
  // Strata are interleaved by a seeded shuffle so id order carries no signal.
  std::vector<Stratum> strata(spec.n_docs, Stratum::junk);
  for (std::size_t i = 0; i < n_hq; ++i) strata[i] = Stratum::high_quality;
  for (std::size_t i = n_hq; i < n_hq + n_fluent; ++i) strata[i] = Stratum::fluent;
  shuffle_in_place(strata, rng);

  for (std::size_t i = 0; i < spec.n_docs; ++i) {
    const std::uint64_t id = spec.first_id + i;
    DocumentRecord doc;
    doc.id = id;
    doc.lang = spec.lang;
    doc.n_tokens = 32 + rng.below(480);
    if (spec.with_text) doc.text = std::string(to_string(strata[i])) + " synthetic document " + std::to_string(id);
    c.docs.push_back(std::move(doc));
    c.embeddings.ids.push_back(id);
    const auto& mean = means[static_cast<int>(strata[i])];
    for (std::size_t k = 0; k < spec.dim; ++k) {
      c.embeddings.data.push_back(static_cast<float>(mean[k] + spec.noise * rng.normal()));
    }
  }
  c.strata = std::move(strata);
  return c;
}

// A positive anchor pool: every document drawn from the high-quality stratum.
inline Corpus make_anchor_pool(const std::string& lang, std::size_t dim, std::size_t n, std::uint64_t first_id,
                               std::uint64_t seed, double offset = 2.0, double noise = 1.0) {
  CorpusSpec spec;
  spec.lang = lang;
  spec.dim = dim;
  spec.n_docs = n;
  spec.frac_high_quality = 1.0;
  spec.frac_fluent = 0.0;
  spec.offset = offset;
  spec.noise = noise;
  spec.first_id = first_id;
  spec.seed = seed;
  return make_corpus(spec);
}

}  // namespace qfilter::synth
