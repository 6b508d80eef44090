// sutalm/tta.hpp

// Single-utterance test-time adaptation: entropy plus reweighted minimum
// class confusion, minimised over the model's feature affine only.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sutalm/acoustic.hpp"
#include "sutalm/common.hpp"
#include "sutalm/decode.hpp"

namespace sutalm {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// max_steps follows the published setting; the remaining defaults were tuned
/// on the synthetic benchmark.
struct TtaConfig {
  int max_steps = 20;
  double learning_rate = 0.03;  // tuned on the synthetic domains
  double temperature = 1.0;
  double entropy_weight = 0.5;
  double mcc_weight = 0.2;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_steps < 0) throw InvalidArgument("tta: max_steps must be >= 0");
    if (!(learning_rate >= 0.0)) throw InvalidArgument("tta: learning_rate must be >= 0");
    if (!(temperature > 0.0)) throw InvalidArgument("tta: temperature must be > 0");
    if (entropy_weight < 0.0 || mcc_weight < 0.0 || entropy_weight + mcc_weight <= 0.0)
      throw InvalidArgument("tta: loss weights must be >= 0 with a positive sum");
  }
};

struct LossResult {
  double value = 0.0;
  double entropy = 0.0;  // mean frame entropy
  double mcc = 0.0;      // class-confusion term
  Matrix grad;           // d value / d logits
};

/// Loss and its exact gradient with respect to the logits.
///
/// With p_l = softmax(z_l / T) and H_l its entropy:
///   ent = mean_l H_l
///   w_l = L (1 + e^{-H_l}) / sum_m (1 + e^{-H_m})
///   M   = P^T diag(w) P,  s_i = sum_j M_ij
///   mcc = sum_{i != j} M_ij / s_i / C = 1 - (1/C) sum_i M_ii / s_i
/// The certainty weights are differentiated as well, so the gradient is exact.
inline LossResult suta_loss(const LogitMatrix& z, const TtaConfig& cfg) {
  const std::size_t L = z.frames();
  const std::size_t C = z.classes();
  LossResult r;
  r.grad = Matrix(L, C);
  if (L == 0 || C == 0) return r;
  const double T = cfg.temperature;
  const double Ld = static_cast<double>(L);
  const double Cd = static_cast<double>(C);

  Matrix p(L, C), logp(L, C);
  std::vector<double> H(L);
  for (std::size_t l = 0; l < L; ++l) {
    log_softmax(z.row(l), logp.row(l), T);
    double h = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
      p(l, k) = std::exp(logp(l, k));
      h -= p(l, k) * logp(l, k);
    }
    H[l] = h;
  }

  // Gradients accumulate in terms of p (direct) and H (through the weights).
  Matrix g_p(L, C);
  std::vector<double> g_H(L, 0.0);

  double ent = 0.0;
  for (double h : H) ent += h;
  ent /= Ld;
  for (std::size_t l = 0; l < L; ++l) g_H[l] += cfg.entropy_weight / Ld;

  double mcc = 0.0;
  if (cfg.mcc_weight > 0.0) {
    std::vector<double> a(L);
    double A = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      a[l] = 1.0 + std::exp(-H[l]);
      A += a[l];
    }
    std::vector<double> w(L);
    for (std::size_t l = 0; l < L; ++l) w[l] = Ld * a[l] / A;

    std::vector<double> diag(C, 0.0), s(C, 0.0);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t k = 0; k < C; ++k) {
        diag[k] += w[l] * p(l, k) * p(l, k);
        s[k] += w[l] * p(l, k);
      }
    double ratio = 0.0;
    for (std::size_t k = 0; k < C; ++k) ratio += diag[k] / s[k];
    mcc = 1.0 - ratio / Cd;

    const double lam = cfg.mcc_weight;
    std::vector<double> g_w(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t k = 0; k < C; ++k) {
        const double dd = -lam / (Cd * s[k]);                  // d/d diag_k
        const double ds = lam * diag[k] / (Cd * s[k] * s[k]);  // d/d s_k
        g_p(l, k) += w[l] * (2.0 * p(l, k) * dd + ds);
        g_w[l] += p(l, k) * p(l, k) * dd + p(l, k) * ds;
      }
    }
    double wg = 0.0;
    for (std::size_t m = 0; m < L; ++m) wg += g_w[m] * a[m];
    for (std::size_t l = 0; l < L; ++l) {
      const double g_a = (Ld / A) * (g_w[l] - wg / A);
      g_H[l] += g_a * -std::exp(-H[l]);
    }
  }

  r.entropy = ent;
  r.mcc = mcc;
  r.value = cfg.entropy_weight * ent + cfg.mcc_weight * mcc;

  // Back through softmax(z / T):
  //   dH/du_k = -p_k (log p_k + H),  dp_j/du_k = p_j (delta_jk - p_k).
  for (std::size_t l = 0; l < L; ++l) {
    double dot = 0.0;
    for (std::size_t k = 0; k < C; ++k) dot += g_p(l, k) * p(l, k);
    for (std::size_t k = 0; k < C; ++k) {
      const double du = p(l, k) * (g_p(l, k) - dot) - g_H[l] * p(l, k) * (logp(l, k) + H[l]);
      r.grad(l, k) = du / T;
    }
  }
  return r;
}

struct AffineGrad {
  std::vector<double> gamma;
  std::vector<double> shift;
};

/// Chain rule through z_l = (gamma * x_l + shift) W + c.
inline AffineGrad affine_gradient(const AcousticModel& m, const Matrix& features,
                                  const Matrix& grad_z) {
  const std::size_t dim = m.feature_dim();
  AffineGrad g{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (std::size_t l = 0; l < features.rows(); ++l) {
    auto gz = grad_z.row(l);
    auto x = features.row(l);
    for (std::size_t j = 0; j < dim; ++j) {
      auto w = m.weights.row(j);
      double gh = 0.0;
      for (std::size_t k = 0; k < gz.size(); ++k) gh += w[k] * gz[k];
      g.gamma[j] += gh * x[j];
      g.shift[j] += gh;
    }
  }
  return g;
}

struct OptimizerState {
  std::vector<double> m_gamma, v_gamma, m_shift, v_shift;
  int steps = 0;
};

namespace detail {

inline void apply_update(std::vector<double>& param, const std::vector<double>& grad,
                         std::vector<double>& m1, std::vector<double>& m2, int step,
                         const TtaConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= cfg.learning_rate * grad[i];
    return;
  }
  m1.resize(param.size(), 0.0);
  m2.resize(param.size(), 0.0);
  const double c1 = 1.0 - std::pow(cfg.beta1, step);
  const double c2 = 1.0 - std::pow(cfg.beta2, step);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
    m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    param[i] -= cfg.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.epsilon);
  }
}

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Updates the affine from a logit gradient; throws on a non-finite gradient.
inline void update_affine(AcousticModel& m, const Utterance& u, const Matrix& grad_z,
                          OptimizerState& opt, const TtaConfig& cfg) {
  const AffineGrad g = affine_gradient(m, u.features, grad_z);
  if (!all_finite(g.gamma) || !all_finite(g.shift))
    throw DivergenceError("adaptation produced a non-finite gradient");
  ++opt.steps;
  apply_update(m.gamma, g.gamma, opt.m_gamma, opt.v_gamma, opt.steps, cfg);
  apply_update(m.shift, g.shift, opt.m_shift, opt.v_shift, opt.steps, cfg);
}

}  // namespace detail

/// One forward, one loss evaluation and one optimizer update of (gamma, shift).
/// Returns the loss before the update.
inline double adapt_step(AcousticModel& m, const Utterance& u, OptimizerState& opt,
                         const TtaConfig& cfg) {
  const LogitMatrix z = forward(m, u);
  const LossResult loss = suta_loss(z, cfg);
  if (!std::isfinite(loss.value) || !loss.grad.all_finite())
    throw DivergenceError("adaptation produced a non-finite loss");
  detail::update_affine(m, u, loss.grad, opt, cfg);
  return loss.value;
}

struct TrajectoryStep {
  std::vector<double> gamma;
  std::vector<double> shift;
  LogitMatrix logits;
  Transcript transcript;  // greedy
  double acoustic_score = 0.0;
  double loss = 0.0;
};

struct AdaptTrajectory {
  std::vector<TrajectoryStep> steps;
  bool truncated = false;  // stopped early because adaptation diverged

  int last_step() const { return static_cast<int>(steps.size()) - 1; }
};

/// Called after each recorded step; return false to stop adapting.
using StepCallback = std::function<bool(int step, const TrajectoryStep&)>;

/// Runs up to cfg.max_steps updates from the source snapshot and records
/// steps 0..N. The model is reset to its source parameters on return.
inline AdaptTrajectory adapt_trajectory(AcousticModel& m, const Utterance& u, const TtaConfig& cfg,
                                        const StepCallback& on_step = {}) {
  cfg.validate();
  if (u.features.cols() != m.feature_dim())
    throw DimensionError("adapt_trajectory: feature width does not match model");
  m.reset_to_source();
  AdaptTrajectory traj;
  OptimizerState opt;
  for (int t = 0; t <= cfg.max_steps; ++t) {
    LogitMatrix z = forward(m, u);
    if (!z.all_finite()) {
      traj.truncated = true;
      break;
    }
    LossResult loss = suta_loss(z, cfg);
    if (!std::isfinite(loss.value)) {
      traj.truncated = true;
      break;
    }
    TrajectoryStep step;
    step.gamma = m.gamma;
    step.shift = m.shift;
    step.transcript = greedy_decode(z, m.alphabet);
    step.acoustic_score = mean_log_confidence(z);
    step.loss = loss.value;
    step.logits = std::move(z);
    traj.steps.push_back(std::move(step));
    if (on_step && !on_step(t, traj.steps.back())) break;
    if (t == cfg.max_steps) break;
    if (!loss.grad.all_finite()) {
      traj.truncated = true;
      break;
    }
    try {
      detail::update_affine(m, u, loss.grad, opt, cfg);
    } catch (const DivergenceError&) {
      traj.truncated = true;
      break;
    }
  }
  m.reset_to_source();
  return traj;
}

/// Number of optimizer updates the trajectory represents.
inline int steps_executed(const AdaptTrajectory& traj) { return std::max(traj.last_step(), 0); }

/// One JSON object per step (loss, acoustic score, greedy transcript).
inline void write_trajectory(std::ostream& os, const AdaptTrajectory& traj) {
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& s = traj.steps[t];
    os << nlohmann::json{{"step", t},
                         {"loss", s.loss},
                         {"acoustic_score", s.acoustic_score},
                         {"transcript", join_words(s.transcript)}}
              .dump()
       << '\n';
  }
}

}  // namespace sutalm
