// tests/test_acoustic.cpp

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sutalm/acoustic.hpp"
#include "sutalm/config.hpp"

using namespace sutalm;

namespace {

AcousticModel random_model(std::mt19937_64& rng, const Alphabet& a, std::size_t dim) {
  AcousticModel m = make_model(a, dim);
  m.weights = oracle::random_matrix(rng, dim, static_cast<std::size_t>(a.size()));
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : m.bias) v = n(rng);
  for (double& v : m.gamma) v = 1.0 + 0.3 * n(rng);
  for (double& v : m.shift) v = 0.3 * n(rng);
  m.snapshot_source();
  return m;
}

Corpus separable_corpus(int n, std::uint64_t seed) {
  CorpusSpec s = default_run_config().corpus;
  s.num_utterances = n;
  s.embedding_scale = 3.0;
  return synth_corpus(s, seed);
}

}  // namespace

TEST(Forward, MatchesNaiveEvaluation) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Alphabet a("abcde");
    const std::size_t dim = 1 + rng() % 9;
    const AcousticModel m = random_model(rng, a, dim);
    const Matrix x = oracle::random_matrix(rng, 1 + rng() % 12, dim);
    const LogitMatrix z = forward(m, x);
    const LogitMatrix ref = oracle::naive_forward(x, m.gamma, m.shift, m.weights, m.bias);
    ASSERT_EQ(z.frames(), x.rows());
    for (std::size_t i = 0; i < z.data().size(); ++i) EXPECT_NEAR(z.data()[i], ref.data()[i], 1e-10);
  }
}

TEST(Forward, IdentityAffineIsPlainLinear) {
  std::mt19937_64 rng(2);
  AcousticModel m = random_model(rng, Alphabet("ab"), 4);
  m.gamma.assign(4, 1.0);
  m.shift.assign(4, 0.0);
  const Matrix x = oracle::random_matrix(rng, 3, 4);
  const LogitMatrix z = forward(m, x);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < 4; ++k) {
      double s = m.bias[k];
      for (std::size_t j = 0; j < 4; ++j) s += x(l, j) * m.weights(j, k);
      EXPECT_NEAR(z(l, k), s, 1e-12);
    }
}

TEST(Forward, ZeroFrameGivesBias) {
  std::mt19937_64 rng(4);
  AcousticModel m = random_model(rng, Alphabet("ab"), 5);
  m.shift.assign(5, 0.0);
  const LogitMatrix z = forward(m, Matrix(2, 5, 0.0));
  for (std::size_t k = 0; k < m.num_classes(); ++k) EXPECT_EQ(z(1, k), m.bias[k]);
}

TEST(Forward, LinearInFeaturesWithoutShift) {
  std::mt19937_64 rng(5);
  AcousticModel m = random_model(rng, Alphabet("abc"), 6);
  m.shift.assign(6, 0.0);
  const Matrix x = oracle::random_matrix(rng, 4, 6);
  Matrix y = x;
  for (double& v : y.data()) v *= 2.5;
  const LogitMatrix zx = forward(m, x), zy = forward(m, y);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t k = 0; k < m.num_classes(); ++k)
      EXPECT_NEAR(zy(l, k) - m.bias[k], 2.5 * (zx(l, k) - m.bias[k]), 1e-10);
}

TEST(Forward, RejectsWidthMismatch) {
  const AcousticModel m = make_model(Alphabet("ab"), 4);
  EXPECT_THROW(forward(m, Matrix(3, 5)), DimensionError);
}

TEST(Confidence, LimitsAndShiftInvariance) {
  LogitMatrix flat(3, 4, 0.7);
  for (double c : confidence(flat)) EXPECT_NEAR(c, 0.25, 1e-15);
  LogitMatrix peaked(1, 3, -500.0);
  peaked(0, 1) = 500.0;
  EXPECT_NEAR(confidence(peaked)[0], 1.0, 1e-15);

  std::mt19937_64 rng(8);
  const LogitMatrix z = oracle::random_logits(rng, 6, 5);
  LogitMatrix shifted = z;
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t k = 0; k < 5; ++k) shifted(l, k) += 10.0 * static_cast<double>(l) - 3.0;
  const auto a = confidence(z), b = confidence(shifted);
  for (std::size_t l = 0; l < 6; ++l) {
    EXPECT_NEAR(a[l], b[l], 1e-12);
    EXPECT_GT(a[l], 0.0);
    EXPECT_LE(a[l], 1.0);
  }
  EXPECT_NEAR(mean_log_confidence(z), mean_log_confidence(shifted), 1e-12);
  double s = 0.0;
  for (double c : a) s += std::log(c);
  EXPECT_NEAR(mean_log_confidence(z), s / 6.0, 1e-12);
}

TEST(TrainSource, SeparableCorpusIsLearned) {
  const Corpus c = separable_corpus(60, 3);
  TrainConfig cfg;
  cfg.epochs = 10;
  const AcousticModel m = train_source(c, default_run_config().corpus.alphabet(), cfg);
  EXPECT_GE(frame_accuracy(m, c), 0.95);
}

TEST(TrainSource, ZeroEpochsReturnsInitialisation) {
  const Corpus c = separable_corpus(5, 3);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.init_scale = 0.0;
  const AcousticModel m = train_source(c, default_run_config().corpus.alphabet(), cfg);
  EXPECT_EQ(m, make_model(default_run_config().corpus.alphabet(), c[0].features.cols()));
}

TEST(TrainSource, Deterministic) {
  const Corpus c = separable_corpus(20, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  const Alphabet a = default_run_config().corpus.alphabet();
  EXPECT_EQ(train_source(c, a, cfg), train_source(c, a, cfg));
}

TEST(TrainSource, RejectsBadInput) {
  const Alphabet a = default_run_config().corpus.alphabet();
  EXPECT_THROW(train_source({}, a, {}), InvalidArgument);
  Corpus c = separable_corpus(2, 1);
  c[1].alignment.clear();
  EXPECT_THROW(train_source(c, a, {}), InvalidArgument);
}

TEST(AcousticModel, EpisodicResetReproducesSourceLogits) {
  std::mt19937_64 rng(6);
  AcousticModel m = random_model(rng, Alphabet("abc"), 5);
  const Matrix x = oracle::random_matrix(rng, 7, 5);
  const LogitMatrix z0 = forward(m, x);
  for (double& g : m.gamma) g *= 1.7;
  for (double& s : m.shift) s += 0.4;
  EXPECT_NE(forward(m, x), z0);
  m.reset_to_source();
  EXPECT_EQ(forward(m, x), z0);
}

TEST(AcousticModel, JsonRoundTrip) {
  std::mt19937_64 rng(9);
  const AcousticModel m = random_model(rng, Alphabet("abc"), 3);
  const AcousticModel back = acoustic_model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back, m);
  auto j = to_json(m);
  j["bias"] = std::vector<double>{1.0};
  EXPECT_THROW(acoustic_model_from_json(j), DimensionError);
  auto k = to_json(m);
  k.erase("weights");
  EXPECT_THROW(acoustic_model_from_json(k), ConfigError);
  EXPECT_THROW(load_acoustic_model("/nonexistent/model.json"), IoError);
}
