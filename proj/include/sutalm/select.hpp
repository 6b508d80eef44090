// sutalm/select.hpp

// Auto-step selection over an adaptation trajectory.
//
// A step t is valid when its acoustic score S_t (mean log top-class
// probability) is at least tau. Among valid steps the one whose greedy
// transcript has the highest LM log-probability wins, earliest index on
// ties; with no valid step the last step is used. The online variant stops
// adapting once the best LM score has not strictly improved for `patience`
// consecutive valid steps.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "sutalm/acoustic.hpp"
#include "sutalm/decode.hpp"
#include "sutalm/lm.hpp"
#include "sutalm/tta.hpp"
#include "sutalm/wer.hpp"

namespace sutalm {

struct SelectConfig {
  double tau = -0.05;
  int patience = 3;
  bool include_sentence_end = true;  // LM score of y_t includes p(</s> | ...)

  void validate() const {
    if (patience < 1) throw InvalidArgument("select: patience must be >= 1");
    if (std::isnan(tau)) throw InvalidArgument("select: tau is NaN");
  }
};

struct StepAudit {
  int step = 0;
  double acoustic_score = 0.0;
  bool valid = false;
  std::optional<double> lm_score;  // only computed for valid steps
};

struct SelectionResult {
  int t_star = 0;
  int valid_set_size = 0;
  int steps_executed = 0;
  std::vector<StepAudit> audit;
};

inline nlohmann::json to_json(const SelectionResult& r) {
  nlohmann::json audit = nlohmann::json::array();
  for (const auto& a : r.audit) {
    audit.push_back({{"step", a.step},
                     {"acoustic_score", a.acoustic_score},
                     {"valid", a.valid},
                     {"lm_score", a.lm_score ? nlohmann::json(*a.lm_score) : nlohmann::json()}});
  }
  return {{"t_star", r.t_star},
          {"valid_set_size", r.valid_set_size},
          {"steps_executed", r.steps_executed},
          {"audit", std::move(audit)}};
}

inline double acoustic_score(const LogitMatrix& z) { return mean_log_confidence(z); }

inline std::vector<int> threshold_steps(std::span<const double> scores, double tau) {
  std::vector<int> valid;
  for (std::size_t t = 0; t < scores.size(); ++t)
    if (scores[t] >= tau) valid.push_back(static_cast<int>(t));
  return valid;
}

/// Offline rule on precomputed scores. `lm_scores` is read only at valid steps.
inline int select_from_scores(std::span<const double> acoustic, std::span<const double> lm_scores,
                              double tau) {
  if (acoustic.empty()) throw InvalidArgument("select: empty trajectory");
  int best = -1;
  for (int t : threshold_steps(acoustic, tau))
    if (best < 0 || lm_scores[static_cast<std::size_t>(t)] > lm_scores[static_cast<std::size_t>(best)])
      best = t;
  return best < 0 ? static_cast<int>(acoustic.size()) - 1 : best;
}

/// Early-stopping scan over a stream of steps. Feed steps in order; `done()`
/// turns true once patience is exhausted.
class EarlyStopper {
 public:
  EarlyStopper(double tau, int patience) : tau_(tau), patience_(patience) {}

  /// `lm_score` is evaluated lazily, only for valid steps.
  template <typename LmScoreFn>
  StepAudit observe(int step, double acoustic, LmScoreFn&& lm_score) {
    last_ = step;
    StepAudit a{step, acoustic, acoustic >= tau_, std::nullopt};
    if (!a.valid) return a;
    ++valid_;
    const double s = lm_score();
    a.lm_score = s;
    if (best_step_ < 0 || s > best_score_) {
      best_step_ = step;
      best_score_ = s;
      stale_ = 0;
    } else if (++stale_ >= patience_) {
      done_ = true;
    }
    return a;
  }

  bool done() const { return done_; }
  int valid_count() const { return valid_; }
  /// Best valid step, or the last observed step when none was valid.
  int selected() const { return best_step_ >= 0 ? best_step_ : last_; }

 private:
  double tau_;
  int patience_;
  int best_step_ = -1;
  double best_score_ = kNegInf;
  int stale_ = 0;
  int valid_ = 0;
  int last_ = 0;
  bool done_ = false;
};

/// Online rule on precomputed scores; returns (t*, last step visited).
inline std::pair<int, int> early_stop_from_scores(std::span<const double> acoustic,
                                                  std::span<const double> lm_scores, double tau,
                                                  int patience) {
  if (acoustic.empty()) throw InvalidArgument("select: empty trajectory");
  EarlyStopper stop(tau, patience);
  int t = 0;
  for (; t < static_cast<int>(acoustic.size()); ++t) {
    stop.observe(t, acoustic[static_cast<std::size_t>(t)],
                 [&] { return lm_scores[static_cast<std::size_t>(t)]; });
    if (stop.done()) break;
  }
  return {stop.selected(), std::min(t, static_cast<int>(acoustic.size()) - 1)};
}

inline SelectionResult select_step(const AdaptTrajectory& traj, const NGramModel& lm,
                                   const SelectConfig& cfg) {
  cfg.validate();
  if (traj.steps.empty()) throw InvalidArgument("select_step: empty trajectory");
  SelectionResult r;
  std::vector<double> acoustic, lm_scores(traj.steps.size(), kNegInf);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& s = traj.steps[t];
    StepAudit a{static_cast<int>(t), s.acoustic_score, s.acoustic_score >= cfg.tau, std::nullopt};
    if (a.valid) {
      lm_scores[t] = score_sequence(lm, s.transcript, cfg.include_sentence_end);
      a.lm_score = lm_scores[t];
      ++r.valid_set_size;
    }
    acoustic.push_back(s.acoustic_score);
    r.audit.push_back(a);
  }
  r.t_star = select_from_scores(acoustic, lm_scores, cfg.tau);
  r.steps_executed = steps_executed(traj);
  return r;
}

struct OnlineSelection {
  SelectionResult selection;
  AdaptTrajectory trajectory;  // only the executed steps
};

/// Interleaves adaptation with selection and stops early.
inline OnlineSelection select_step_online(AcousticModel& m, const Utterance& u,
                                          const NGramModel& lm, const TtaConfig& tta_cfg,
                                          const SelectConfig& cfg) {
  cfg.validate();
  EarlyStopper stop(cfg.tau, cfg.patience);
  OnlineSelection out;
  out.trajectory = adapt_trajectory(m, u, tta_cfg, [&](int t, const TrajectoryStep& s) {
    out.selection.audit.push_back(stop.observe(t, s.acoustic_score, [&] {
      return score_sequence(lm, s.transcript, cfg.include_sentence_end);
    }));
    return !stop.done();
  });
  out.selection.t_star = stop.selected();
  out.selection.valid_set_size = stop.valid_count();
  out.selection.steps_executed = steps_executed(out.trajectory);
  return out;
}

/// Uniform choice over the valid set (ablation); last step when it is empty.
inline SelectionResult select_random_step(const AdaptTrajectory& traj, double tau,
                                          std::uint64_t seed) {
  if (traj.steps.empty()) throw InvalidArgument("select_random_step: empty trajectory");
  std::vector<double> acoustic;
  for (const auto& s : traj.steps) acoustic.push_back(s.acoustic_score);
  const auto valid = threshold_steps(acoustic, tau);
  SelectionResult r;
  r.valid_set_size = static_cast<int>(valid.size());
  r.steps_executed = steps_executed(traj);
  if (valid.empty()) {
    r.t_star = traj.last_step();
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    r.t_star = valid[pick(rng)];
  }
  return r;
}

struct DecoderContext {
  const Alphabet& alphabet;
  const NGramModel* lm;
  FusionConfig fusion;
};

/// Step whose beam-search output has the lowest WER, earliest on ties.
inline int oracle_step(const AdaptTrajectory& traj, std::span<const std::string> reference,
                       const DecoderContext& ctx) {
  if (traj.steps.empty()) throw InvalidArgument("oracle_step: empty trajectory");
  int best = 0;
  int best_edits = -1;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const Transcript hyp = beam_decode(traj.steps[t].logits, ctx.alphabet, ctx.lm, ctx.fusion);
    const int e = wer(reference, hyp).edits;
    if (best_edits < 0 || e < best_edits) {
      best = static_cast<int>(t);
      best_edits = e;
    }
  }
  return best;
}

}  // namespace sutalm
