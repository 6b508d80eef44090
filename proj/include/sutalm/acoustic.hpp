// sutalm/acoustic.hpp

// Compact CTC acoustic model: a per-feature affine transform (the only
// parameters touched at test time) followed by a linear frame classifier.

#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sutalm/common.hpp"
#include "sutalm/corpus.hpp"

namespace sutalm {

struct AcousticModel {
  Alphabet alphabet;
  Matrix weights;             // feature_dim x classes
  std::vector<double> bias;   // classes
  std::vector<double> gamma;  // feature_dim, adaptable scale
  std::vector<double> shift;  // feature_dim, adaptable offset
  std::vector<double> source_gamma;
  std::vector<double> source_shift;

  std::size_t feature_dim() const { return weights.rows(); }
  std::size_t num_classes() const { return weights.cols(); }
  int blank() const { return Alphabet::kBlank; }

  /// Episodic reset to the source snapshot.
  void reset_to_source() {
    gamma = source_gamma;
    shift = source_shift;
  }

  /// Takes the current affine as the new source snapshot.
  void snapshot_source() {
    source_gamma = gamma;
    source_shift = shift;
  }

  friend bool operator==(const AcousticModel&, const AcousticModel&) = default;
};

inline AcousticModel make_model(const Alphabet& alphabet, std::size_t feature_dim) {
  const auto classes = static_cast<std::size_t>(alphabet.size());
  AcousticModel m;
  m.alphabet = alphabet;
  m.weights = Matrix(feature_dim, classes);
  m.bias.assign(classes, 0.0);
  m.gamma.assign(feature_dim, 1.0);
  m.shift.assign(feature_dim, 0.0);
  m.snapshot_source();
  return m;
}

/// Row l of the result is (gamma * x_l + shift) W + bias.
inline LogitMatrix forward(const AcousticModel& m, const Matrix& features) {
  const std::size_t dim = m.feature_dim();
  const std::size_t classes = m.num_classes();
  if (features.cols() != dim)
    throw DimensionError("forward: feature width " + std::to_string(features.cols()) +
                         " does not match model input " + std::to_string(dim));
  LogitMatrix z(features.rows(), classes);
  std::vector<double> h(dim);
  for (std::size_t l = 0; l < features.rows(); ++l) {
    auto x = features.row(l);
    for (std::size_t j = 0; j < dim; ++j) h[j] = m.gamma[j] * x[j] + m.shift[j];
    auto out = z.row(l);
    std::copy(m.bias.begin(), m.bias.end(), out.begin());
    for (std::size_t j = 0; j < dim; ++j) {
      const double hj = h[j];
      auto w = m.weights.row(j);
      for (std::size_t k = 0; k < classes; ++k) out[k] += hj * w[k];
    }
  }
  return z;
}

inline LogitMatrix forward(const AcousticModel& m, const Utterance& u) {
  return forward(m, u.features);
}

/// Per-frame probability of the predicted class (temperature 1).
inline std::vector<double> confidence(const LogitMatrix& z) {
  std::vector<double> c(z.frames());
  std::vector<double> lp(z.classes());
  for (std::size_t l = 0; l < z.frames(); ++l) {
    log_softmax(z.row(l), lp);
    c[l] = std::exp(*std::max_element(lp.begin(), lp.end()));
  }
  return c;
}

/// Mean over frames of the log top-class probability.
inline double mean_log_confidence(const LogitMatrix& z) {
  if (z.frames() == 0) return 0.0;
  double s = 0.0;
  std::vector<double> lp(z.classes());
  for (std::size_t l = 0; l < z.frames(); ++l) {
    log_softmax(z.row(l), lp);
    s += *std::max_element(lp.begin(), lp.end());
  }
  return s / static_cast<double>(z.frames());
}

// ---------------------------------------------------------------------------
// Source training

/// Frame-level cross-entropy training. Defaults were tuned on the synthetic
/// benchmark; they are not taken from any published recipe.
struct TrainConfig {
  int epochs = 20;
  double learning_rate = 0.2;
  int batch_size = 64;
  double init_scale = 0.01;
  std::uint64_t seed = 1;
};

inline AcousticModel train_source(const Corpus& corpus, const Alphabet& alphabet,
                                  const TrainConfig& cfg) {
  if (corpus.empty()) throw InvalidArgument("train_source: empty corpus");
  if (cfg.batch_size < 1) throw InvalidArgument("train_source: batch_size must be positive");
  const std::size_t dim = corpus.front().features.cols();
  const auto classes = static_cast<std::size_t>(alphabet.size());

  struct Frame {
    std::span<const double> x;
    int label;
  };
  std::vector<Frame> frames;
  for (const auto& u : corpus) {
    if (u.alignment.empty())
      throw InvalidArgument("train_source: utterance '" + u.id + "' has no alignment");
    if (u.features.cols() != dim) throw DimensionError("train_source: mixed feature widths");
    for (std::size_t l = 0; l < u.frames(); ++l) {
      if (u.alignment[l] < 0 || static_cast<std::size_t>(u.alignment[l]) >= classes)
        throw DimensionError("train_source: alignment class out of range");
      frames.push_back({u.features.row(l), u.alignment[l]});
    }
  }

  AcousticModel m = make_model(alphabet, dim);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, cfg.init_scale);
  for (double& w : m.weights.data()) w = init(rng);

  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  Matrix grad_w(dim, classes);
  std::vector<double> grad_c(classes);
  std::vector<double> p(classes);
  std::vector<double> z(classes);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
      std::fill(grad_c.begin(), grad_c.end(), 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const Frame& f = frames[order[i]];
        std::copy(m.bias.begin(), m.bias.end(), z.begin());
        for (std::size_t j = 0; j < dim; ++j) {
          auto w = m.weights.row(j);
          for (std::size_t k = 0; k < classes; ++k) z[k] += f.x[j] * w[k];
        }
        softmax(z, p);
        p[static_cast<std::size_t>(f.label)] -= 1.0;
        for (std::size_t k = 0; k < classes; ++k) grad_c[k] += p[k];
        for (std::size_t j = 0; j < dim; ++j) {
          auto g = grad_w.row(j);
          for (std::size_t k = 0; k < classes; ++k) g[k] += f.x[j] * p[k];
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t i = 0; i < grad_w.data().size(); ++i)
        m.weights.data()[i] -= step * grad_w.data()[i];
      for (std::size_t k = 0; k < classes; ++k) m.bias[k] -= step * grad_c[k];
    }
  }
  return m;
}

/// Fraction of aligned frames whose argmax matches the gold class.
inline double frame_accuracy(const AcousticModel& m, const Corpus& corpus) {
  std::size_t hit = 0, total = 0;
  for (const auto& u : corpus) {
    const LogitMatrix z = forward(m, u);
    for (std::size_t l = 0; l < z.frames(); ++l) {
      hit += static_cast<int>(argmax(z.row(l))) == u.alignment.at(l);
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const AcousticModel& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t j = 0; j < m.weights.rows(); ++j) {
    auto r = m.weights.row(j);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"feature_dim", m.feature_dim()},
          {"num_classes", m.num_classes()},
          {"blank_index", m.blank()},
          {"space_index", Alphabet::kSpace},
          {"letters", m.alphabet.letters()},
          {"weights", std::move(rows)},
          {"bias", m.bias},
          {"gamma", m.source_gamma},
          {"shift", m.source_shift}};
}

inline AcousticModel acoustic_model_from_json(const nlohmann::json& j) {
  AcousticModel m;
  try {
    const auto dim = j.at("feature_dim").get<std::size_t>();
    const auto classes = j.at("num_classes").get<std::size_t>();
    if (j.at("blank_index").get<int>() != Alphabet::kBlank)
      throw ConfigError("acoustic model: unsupported blank index");
    m.alphabet = Alphabet(j.at("letters").get<std::string>());
    if (static_cast<std::size_t>(m.alphabet.size()) != classes)
      throw DimensionError("acoustic model: letters do not match num_classes");
    const auto& rows = j.at("weights");
    if (rows.size() != dim) throw DimensionError("acoustic model: weights row count");
    m.weights = Matrix(dim, classes);
    for (std::size_t r = 0; r < dim; ++r) {
      if (rows[r].size() != classes) throw DimensionError("acoustic model: weights column count");
      for (std::size_t k = 0; k < classes; ++k) m.weights(r, k) = rows[r][k].get<double>();
    }
    m.bias = j.at("bias").get<std::vector<double>>();
    m.gamma = j.at("gamma").get<std::vector<double>>();
    m.shift = j.at("shift").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed acoustic model: ") + e.what());
  }
  if (m.bias.size() != m.num_classes() || m.gamma.size() != m.feature_dim() ||
      m.shift.size() != m.feature_dim())
    throw DimensionError("acoustic model: parameter vector sizes do not match shapes");
  m.snapshot_source();
  return m;
}

inline AcousticModel load_acoustic_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open acoustic model '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("acoustic model is not valid JSON: ") + e.what());
  }
  return acoustic_model_from_json(j);
}

}  // namespace sutalm
