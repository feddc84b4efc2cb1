#pragma once

// One-hidden-layer MLP quality classifier over document embeddings:
//
//   score(x) = sigmoid(w2 . dropout(relu(W1 x + b1)) + b2)
//
// Parameters are kept in double precision and every dot product accumulates
// in double, so results do not depend on vectorization width.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/embedding.hpp"
#include "qfilter/error.hpp"
#include "qfilter/random.hpp"
#include "qfilter/sampler.hpp"

namespace qfilter {

inline constexpr std::size_t kDefaultHiddenDim = 256;
inline constexpr double kDefaultDropout = 0.2;
inline constexpr double kProbabilityClamp = 1e-12;
inline constexpr int kModelFormatVersion = 1;

// Flat parameter layout: W1 (hidden x in, row-major) | b1 (hidden) | w2 (hidden) | b2.
struct ClassifierModel {
  std::size_t dim_in = kDefaultEmbeddingDim;
  std::size_t dim_hidden = kDefaultHiddenDim;
  double dropout_p = kDefaultDropout;
  std::uint64_t init_seed = 0;
  std::vector<double> params;

  static std::size_t param_count(std::size_t in, std::size_t hidden) { return hidden * in + 2 * hidden + 1; }

  std::span<const double> w1() const { return std::span<const double>(params).subspan(0, dim_hidden * dim_in); }
  std::span<const double> w1_row(std::size_t j) const {
    return std::span<const double>(params).subspan(j * dim_in, dim_in);
  }
  std::span<const double> b1() const { return std::span<const double>(params).subspan(dim_hidden * dim_in, dim_hidden); }
  std::span<const double> w2() const {
    return std::span<const double>(params).subspan(dim_hidden * dim_in + dim_hidden, dim_hidden);
  }
  double b2() const { return params.back(); }

  double& w1(std::size_t j, std::size_t i) { return params[j * dim_in + i]; }
  double& b1(std::size_t j) { return params[dim_hidden * dim_in + j]; }
  double& w2(std::size_t j) { return params[dim_hidden * dim_in + dim_hidden + j]; }
  double& b2() { return params.back(); }

  bool operator==(const ClassifierModel& other) const {
    return dim_in == other.dim_in && dim_hidden == other.dim_hidden &&
           std::bit_cast<std::uint64_t>(dropout_p) == std::bit_cast<std::uint64_t>(other.dropout_p) &&
           init_seed == other.init_seed && params.size() == other.params.size() &&
           std::equal(params.begin(), params.end(), other.params.begin(), [](double a, double b) {
             return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
           });
  }
};

inline void validate(const ClassifierModel& m) {
  require(m.dim_in >= 1 && m.dim_hidden >= 1, ErrorKind::shape, "model dims must be >= 1");
  require(m.dropout_p >= 0.0 && m.dropout_p < 1.0, ErrorKind::argument, "dropout_p must lie in [0,1)");
  require(m.params.size() == ClassifierModel::param_count(m.dim_in, m.dim_hidden), ErrorKind::shape,
          "parameter vector size does not match dims");
  for (double v : m.params) require(std::isfinite(v), ErrorKind::integrity, "non-finite model parameter");
}

// Glorot-uniform weights, zero biases.
inline ClassifierModel init_model(std::size_t dim_in, std::size_t dim_hidden, double dropout_p, std::uint64_t seed) {
  require(dim_in >= 1 && dim_hidden >= 1, ErrorKind::argument, "model dims must be >= 1");
  require(dropout_p >= 0.0 && dropout_p < 1.0, ErrorKind::argument, "dropout_p must lie in [0,1)");
  ClassifierModel m;
  m.dim_in = dim_in;
  m.dim_hidden = dim_hidden;
  m.dropout_p = dropout_p;
  m.init_seed = seed;
  m.params.assign(ClassifierModel::param_count(dim_in, dim_hidden), 0.0);
  Rng rng(derive_seed(seed, "init"));
  const double limit1 = std::sqrt(6.0 / static_cast<double>(dim_in + dim_hidden));
  const double limit2 = std::sqrt(6.0 / static_cast<double>(dim_hidden + 1));
  for (std::size_t k = 0; k < dim_hidden * dim_in; ++k) m.params[k] = (2.0 * rng.uniform() - 1.0) * limit1;
  for (std::size_t j = 0; j < dim_hidden; ++j) m.w2(j) = (2.0 * rng.uniform() - 1.0) * limit2;
  return m;
}

inline ClassifierModel zero_model(std::size_t dim_in, std::size_t dim_hidden, double dropout_p = 0.0) {
  ClassifierModel m;
  m.dim_in = dim_in;
  m.dim_hidden = dim_hidden;
  m.dropout_p = dropout_p;
  m.params.assign(ClassifierModel::param_count(dim_in, dim_hidden), 0.0);
  return m;
}

// Clamped into the open interval so saturated logits never report exactly 0 or 1.
inline double sigmoid(double z) {
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, std::numeric_limits<double>::min(), 1.0 - 0x1.0p-53);
}

namespace detail {

inline void check_input(const ClassifierModel& m, std::span<const float> x) {
  if (x.size() != m.dim_in) {
    fail(ErrorKind::shape, "input has " + std::to_string(x.size()) + " features, model expects " +
                               std::to_string(m.dim_in));
  }
}

inline double pre_activation(const ClassifierModel& m, std::size_t j, std::span<const float> x) {
  const auto row = m.w1_row(j);
  double z = m.b1()[j];
  for (std::size_t i = 0; i < row.size(); ++i) z += row[i] * static_cast<double>(x[i]);
  return z;
}

// Per-unit multiplier: 0 for dropped units, 1/(1-p) for kept ones.
inline void draw_mask(std::vector<double>& mask, double p, Rng* rng) {
  if (rng == nullptr || p == 0.0) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return;
  }
  const double scale = 1.0 / (1.0 - p);
  for (auto& v : mask) v = rng->uniform() < p ? 0.0 : scale;
}

}  // namespace detail

// Hidden activations after ReLU and, when mask_rng is given, inverted dropout.
inline std::vector<double> hidden_activations(const ClassifierModel& m, std::span<const float> x,
                                              Rng* mask_rng = nullptr) {
  detail::check_input(m, x);
  std::vector<double> mask(m.dim_hidden);
  detail::draw_mask(mask, m.dropout_p, mask_rng);
  std::vector<double> a(m.dim_hidden);
  for (std::size_t j = 0; j < m.dim_hidden; ++j) a[j] = std::max(0.0, detail::pre_activation(m, j, x)) * mask[j];
  return a;
}

inline double logit(const ClassifierModel& m, std::span<const float> x, Rng* mask_rng = nullptr) {
  const auto a = hidden_activations(m, x, mask_rng);
  const auto w2 = m.w2();
  double out = m.b2();
  for (std::size_t j = 0; j < a.size(); ++j) out += w2[j] * a[j];
  return out;
}

// Eval-mode score: no dropout.
inline double forward(const ClassifierModel& m, std::span<const float> x) { return sigmoid(logit(m, x)); }

// Train-mode score with a dropout mask drawn from mask_rng.
inline double forward_train(const ClassifierModel& m, std::span<const float> x, Rng& mask_rng) {
  return sigmoid(logit(m, x, &mask_rng));
}

struct TrainingRow {
  std::span<const float> x;
  int label = 0;
};

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> gradients;  // same layout as ClassifierModel::params
};

inline double bce(double s, int y) {
  const double c = std::clamp(s, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return y == 1 ? -std::log(c) : -std::log(1.0 - c);
}

// Mean binary cross-entropy over the batch and its exact gradient for the
// masked forward pass. dropout_enabled=false evaluates the deterministic net.
inline LossAndGradients loss_and_gradients(const ClassifierModel& m, std::span<const TrainingRow> batch,
                                           std::uint64_t dropout_seed, bool dropout_enabled = true) {
  require(!batch.empty(), ErrorKind::argument, "loss_and_gradients: empty batch");
  const std::size_t d = m.dim_in;
  const std::size_t h = m.dim_hidden;
  LossAndGradients out;
  out.gradients.assign(m.params.size(), 0.0);
  double* g_w1 = out.gradients.data();
  double* g_b1 = g_w1 + h * d;
  double* g_w2 = g_b1 + h;
  double& g_b2 = out.gradients.back();

  Rng rng(dropout_seed);
  Rng* mask_rng = dropout_enabled ? &rng : nullptr;
  std::vector<double> z(h), mask(h), a(h);
  const auto w2 = m.w2();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;

  for (const auto& row : batch) {
    detail::check_input(m, row.x);
    require(row.label == 0 || row.label == 1, ErrorKind::argument, "labels must be 0 or 1");
    detail::draw_mask(mask, m.dropout_p, mask_rng);
    double out_logit = m.b2();
    for (std::size_t j = 0; j < h; ++j) {
      z[j] = detail::pre_activation(m, j, row.x);
      a[j] = std::max(0.0, z[j]) * mask[j];
      out_logit += w2[j] * a[j];
    }
    const double s = sigmoid(out_logit);
    loss_sum += bce(s, row.label);

    // d(mean BCE)/d(logit); the clamp only guards the log in the reported loss.
    const double delta = (s - row.label) * inv_n;
    g_b2 += delta;
    for (std::size_t j = 0; j < h; ++j) {
      g_w2[j] += delta * a[j];
      if (z[j] <= 0.0 || mask[j] == 0.0) continue;
      const double dz = delta * w2[j] * mask[j];
      g_b1[j] += dz;
      double* g_row = g_w1 + j * d;
      for (std::size_t i = 0; i < d; ++i) g_row[i] += dz * static_cast<double>(row.x[i]);
    }
  }
  out.loss = loss_sum * inv_n;
  return out;
}

inline double mean_loss(const ClassifierModel& m, std::span<const TrainingRow> rows) {
  require(!rows.empty(), ErrorKind::argument, "mean_loss: empty input");
  double sum = 0.0;
  for (const auto& r : rows) sum += bce(forward(m, r.x), r.label);
  return sum / static_cast<double>(rows.size());
}

inline double accuracy(const ClassifierModel& m, std::span<const TrainingRow> rows) {
  require(!rows.empty(), ErrorKind::argument, "accuracy: empty input");
  std::size_t correct = 0;
  for (const auto& r : rows) correct += ((forward(m, r.x) >= 0.5) == (r.label == 1)) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// numeric gradients by central differences. Dropout is disabled.
inline double gradient_check(const ClassifierModel& m, std::span<const TrainingRow> batch, double epsilon) {
  require(epsilon > 0.0, ErrorKind::argument, "epsilon must be positive");
  const auto analytic = loss_and_gradients(m, batch, 0, false).gradients;
  ClassifierModel probe = m;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.params.size(); ++k) {
    const double original = probe.params[k];
    probe.params[k] = original + epsilon;
    const double up = loss_and_gradients(probe, batch, 0, false).loss;
    probe.params[k] = original - epsilon;
    const double down = loss_and_gradients(probe, batch, 0, false).loss;
    probe.params[k] = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

// --- training -------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 20;
  double val_fraction = 0.1;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::size_t epochs_run = 0;
  std::vector<double> train_loss_per_epoch;
  std::vector<double> val_loss_per_epoch;
  std::vector<double> val_accuracy_per_epoch;
  std::size_t best_epoch = 0;
  double initial_val_loss = 0.0;

  double best_val_loss() const { return val_loss_per_epoch.at(best_epoch); }
  double best_val_accuracy() const { return val_accuracy_per_epoch.at(best_epoch); }
  bool operator==(const TrainReport&) const = default;
};

inline std::size_t validation_count(std::size_t n, double val_fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
}

inline void validate(const TrainConfig& cfg, std::size_t n_examples) {
  require(cfg.learning_rate > 0.0 && std::isfinite(cfg.learning_rate), ErrorKind::argument, "learning_rate must be positive");
  require(cfg.batch_size >= 1, ErrorKind::argument, "batch_size must be >= 1");
  require(cfg.max_epochs >= 1, ErrorKind::argument, "max_epochs must be >= 1");
  require(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0, ErrorKind::argument, "val_fraction must lie in (0,1)");
  require(n_examples >= 2 && validation_count(n_examples, cfg.val_fraction) < n_examples, ErrorKind::argument,
          "val_fraction leaves no training examples");
}

struct TrainResult {
  ClassifierModel model;
  TrainReport report;
};

// Mini-batch Adam (beta1 0.9, beta2 0.999, eps 1e-8) with early stopping on
// validation loss. Returns the parameters of the best-validation epoch.
inline TrainResult train(ClassifierModel model, std::span<const TrainingRow> rows, const TrainConfig& cfg) {
  validate(model);
  validate(cfg, rows.size());
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(cfg.seed, "train-split"));
  shuffle_in_place(order, split_rng);
  const std::size_t n_val = validation_count(rows.size(), cfg.val_fraction);
  std::vector<TrainingRow> val, fit;
  for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? val : fit).push_back(rows[order[k]]);

  TrainReport report;
  report.initial_val_loss = mean_loss(model, val);
  ClassifierModel best = model;
  std::vector<double> m1(model.params.size(), 0.0), m2(model.params.size(), 0.0);
  std::uint64_t step = 0;
  std::size_t stale = 0;
  const std::uint64_t epoch_seed = derive_seed(cfg.seed, "epoch");
  const std::uint64_t dropout_seed = derive_seed(cfg.seed, "dropout");

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(epoch_seed, epoch));
    shuffle_in_place(fit, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < fit.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t len = std::min(cfg.batch_size, fit.size() - start);
      const std::span<const TrainingRow> batch(fit.data() + start, len);
      const auto lg = loss_and_gradients(model, batch, derive_seed(derive_seed(dropout_seed, epoch), batch_index));
      if (!std::isfinite(lg.loss)) {
        fail(ErrorKind::divergence, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(batch_index));
      }
      loss_sum += lg.loss * static_cast<double>(len);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < model.params.size(); ++k) {
        const double g = lg.gradients[k];
        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
        model.params[k] -= cfg.learning_rate * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + adam_eps);
      }
    }
    for (double v : model.params) {
      if (!std::isfinite(v)) fail(ErrorKind::divergence, "non-finite parameter after epoch " + std::to_string(epoch));
    }
    report.train_loss_per_epoch.push_back(loss_sum / static_cast<double>(fit.size()));
    report.val_loss_per_epoch.push_back(mean_loss(model, val));
    report.val_accuracy_per_epoch.push_back(accuracy(model, val));
    report.epochs_run = epoch + 1;

    if (epoch == 0 || report.val_loss_per_epoch.back() < report.val_loss_per_epoch[report.best_epoch]) {
      report.best_epoch = epoch;
      best = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return {std::move(best), std::move(report)};
}

// Gathers embedding rows for labeled examples: positives resolve against
// `positives`, negatives against `negatives`, both by document id.
inline std::vector<TrainingRow> gather_rows(std::span<const LabeledExample> examples, const EmbeddingMatrix& positives,
                                            const EmbeddingMatrix& negatives) {
  std::vector<TrainingRow> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) {
    const EmbeddingMatrix& src = e.label == 1 ? positives : negatives;
    const auto row = src.find(e.doc_id);
    if (!row) {
      fail(ErrorKind::integrity, "no embedding for " + std::string(e.label == 1 ? "positive" : "negative") +
                                     " document " + std::to_string(e.doc_id));
    }
    rows.push_back({src.row(*row), e.label});
  }
  return rows;
}

inline TrainResult train(ClassifierModel model, std::span<const LabeledExample> examples,
                         const EmbeddingMatrix& positives, const EmbeddingMatrix& negatives, const TrainConfig& cfg) {
  require(positives.dim == model.dim_in && negatives.dim == model.dim_in, ErrorKind::shape,
          "embedding dim does not match model input dim");
  const auto rows = gather_rows(examples, positives, negatives);
  return train(std::move(model), rows, cfg);
}

// --- persistence ----------------------------------------------------------

namespace detail {

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const nlohmann::json& j, const char* what) {
  if (!j.is_string()) fail(ErrorKind::format, std::string("model field ") + what + " must be a float literal string");
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') fail(ErrorKind::format, std::string("bad float literal in ") + what + ": " + s);
  return v;
}

inline std::uint64_t params_checksum(std::span<const double> params) {
  std::vector<unsigned char> bytes;
  bytes.reserve(params.size() * 8);
  for (double v : params) put_le<double>(bytes, v);
  return fnv1a64(bytes);
}

}  // namespace detail

inline nlohmann::json model_to_json(const ClassifierModel& m) {
  validate(m);
  using nlohmann::json;
  json w1 = json::array();
  for (std::size_t j = 0; j < m.dim_hidden; ++j) {
    json row = json::array();
    for (double v : m.w1_row(j)) row.push_back(detail::hex_double(v));
    w1.push_back(std::move(row));
  }
  json b1 = json::array(), w2 = json::array();
  for (double v : m.b1()) b1.push_back(detail::hex_double(v));
  for (double v : m.w2()) w2.push_back(detail::hex_double(v));
  char checksum[24];
  std::snprintf(checksum, sizeof checksum, "%016llx",
                static_cast<unsigned long long>(detail::params_checksum(m.params)));
  return json{{"format_version", kModelFormatVersion},
              {"dim_in", m.dim_in},
              {"dim_hidden", m.dim_hidden},
              {"dropout_p", detail::hex_double(m.dropout_p)},
              {"init_seed", m.init_seed},
              {"W1", std::move(w1)},
              {"b1", std::move(b1)},
              {"W2", std::move(w2)},
              {"b2", detail::hex_double(m.b2())},
              {"checksum", checksum}};
}

inline ClassifierModel model_from_json(const nlohmann::json& j) {
  ClassifierModel m;
  try {
    const auto& version = j.at("format_version");
    if (!version.is_number_integer()) fail(ErrorKind::format, "format_version must be an integer");
    const int v = version.get<int>();
    if (v > kModelFormatVersion) {
      fail(ErrorKind::version, "model file format_version " + std::to_string(v) + " is newer than supported " +
                                   std::to_string(kModelFormatVersion));
    }
    if (v < 1) fail(ErrorKind::format, "invalid format_version " + std::to_string(v));
    m.dim_in = j.at("dim_in").get<std::size_t>();
    m.dim_hidden = j.at("dim_hidden").get<std::size_t>();
    m.dropout_p = detail::parse_double(j.at("dropout_p"), "dropout_p");
    m.init_seed = j.at("init_seed").get<std::uint64_t>();
    require(m.dim_in >= 1 && m.dim_hidden >= 1, ErrorKind::format, "model dims must be >= 1");

    const auto& w1 = j.at("W1");
    const auto& b1 = j.at("b1");
    const auto& w2 = j.at("W2");
    require(w1.is_array() && w1.size() == m.dim_hidden, ErrorKind::format,
            "W1 must have dim_hidden = " + std::to_string(m.dim_hidden) + " rows");
    for (std::size_t r = 0; r < w1.size(); ++r) {
      require(w1[r].is_array() && w1[r].size() == m.dim_in, ErrorKind::format,
              "W1 row " + std::to_string(r) + " has " + std::to_string(w1[r].size()) + " entries, header says dim_in = " +
                  std::to_string(m.dim_in));
    }
    require(b1.is_array() && b1.size() == m.dim_hidden, ErrorKind::format, "b1 length mismatch");
    require(w2.is_array() && w2.size() == m.dim_hidden, ErrorKind::format, "W2 length mismatch");

    m.params.reserve(ClassifierModel::param_count(m.dim_in, m.dim_hidden));
    for (const auto& row : w1) {
      for (const auto& v : row) m.params.push_back(detail::parse_double(v, "W1"));
    }
    for (const auto& v : b1) m.params.push_back(detail::parse_double(v, "b1"));
    for (const auto& v : w2) m.params.push_back(detail::parse_double(v, "W2"));
    m.params.push_back(detail::parse_double(j.at("b2"), "b2"));

    for (double v : m.params) require(std::isfinite(v), ErrorKind::integrity, "non-finite parameter in model file");
    require(std::isfinite(m.dropout_p) && m.dropout_p >= 0.0 && m.dropout_p < 1.0, ErrorKind::integrity,
            "dropout_p outside [0,1)");

    const std::string stored = j.at("checksum").get<std::string>();
    char actual[24];
    std::snprintf(actual, sizeof actual, "%016llx",
                  static_cast<unsigned long long>(detail::params_checksum(m.params)));
    require(stored == actual, ErrorKind::corruption, "model parameter checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed model file: ") + e.what());
  }
  return m;
}

inline void save_model(const ClassifierModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write model file " + path.string());
  out << model_to_json(m).dump(1) << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace qfilter
