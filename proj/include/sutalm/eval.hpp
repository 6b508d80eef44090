// sutalm/eval.hpp

// End-to-end method runners, parameter sweeps and report emission.

#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <optional>
#include <cstdint>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sutalm/acoustic.hpp"
#include "sutalm/corpus.hpp"
#include "sutalm/decode.hpp"
#include "sutalm/lm.hpp"
#include "sutalm/select.hpp"
#include "sutalm/tta.hpp"
#include "sutalm/wer.hpp"

namespace sutalm {

enum class Method {
  source,                // greedy on the source model
  suta,                  // greedy after N steps
  rescoring,             // beam search on the source model
  suta_rescoring,        // beam search after N steps
  suta_lm,               // online auto-step selection, then beam search
  suta_lm_offline,       // auto-step selection over the full trajectory
  suta_lm_no_threshold,  // online selection with tau = -inf
  random_step,           // uniform choice over the valid set
  oracle,                // lowest-WER step, earliest on ties
};

inline constexpr Method kAllMethods[] = {
    Method::source,          Method::suta,    Method::rescoring,
    Method::suta_rescoring,  Method::suta_lm, Method::suta_lm_offline,
    Method::suta_lm_no_threshold, Method::random_step, Method::oracle};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::source: return "source";
    case Method::suta: return "suta";
    case Method::rescoring: return "rescoring";
    case Method::suta_rescoring: return "suta_rescoring";
    case Method::suta_lm: return "suta_lm";
    case Method::suta_lm_offline: return "suta_lm_offline";
    case Method::suta_lm_no_threshold: return "suta_lm_no_threshold";
    case Method::random_step: return "random_step";
    case Method::oracle: return "oracle";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown method '" + s + "'");
}

struct MethodConfigs {
  TtaConfig tta;
  SelectConfig select;
  FusionConfig fusion;
  std::uint64_t seed = 0;          // drives the random-step selector
  double frames_per_second = 50.0;  // synthetic "audio" rate for runtime normalisation
  int workers = 1;
};

struct UtteranceRecord {
  std::string id;
  int frames = 0;
  int ref_words = 0;
  int edits = 0;
  double wer = 0.0;
  int t_star = 0;
  int steps_executed = 0;
  double wall_seconds = 0.0;
  std::string hypothesis;
};

struct MethodReport {
  std::string method;
  std::string corpus;
  int total_edits = 0;
  int total_words = 0;
  double corpus_wer = 0.0;  // fraction, micro-averaged
  double avg_selected_step = 0.0;
  double avg_steps_executed = 0.0;
  double mean_wall_seconds = 0.0;
  double wall_per_audio_second = 0.0;
  std::vector<UtteranceRecord> utterances;
};

namespace detail {

struct Outcome {
  Transcript hypothesis;
  int t_star = 0;
  int steps = 0;
};

inline Outcome run_one(Method method, AcousticModel& am, const Utterance& u, const NGramModel& lm,
                       const MethodConfigs& cfg, std::uint64_t utt_seed) {
  const Alphabet& alphabet = am.alphabet;
  auto rescore = [&](const LogitMatrix& z) { return beam_decode(z, alphabet, &lm, cfg.fusion); };
  switch (method) {
    case Method::source: {
      am.reset_to_source();
      return {greedy_decode(forward(am, u), alphabet), 0, 0};
    }
    case Method::rescoring: {
      am.reset_to_source();
      return {rescore(forward(am, u)), 0, 0};
    }
    case Method::suta:
    case Method::suta_rescoring: {
      const AdaptTrajectory traj = adapt_trajectory(am, u, cfg.tta);
      const auto& last = traj.steps.back();
      Transcript hyp = method == Method::suta ? last.transcript : rescore(last.logits);
      return {std::move(hyp), traj.last_step(), steps_executed(traj)};
    }
    case Method::suta_lm:
    case Method::suta_lm_no_threshold: {
      SelectConfig sel = cfg.select;
      if (method == Method::suta_lm_no_threshold) sel.tau = kNegInf;
      const OnlineSelection r = select_step_online(am, u, lm, cfg.tta, sel);
      const auto& step = r.trajectory.steps.at(static_cast<std::size_t>(r.selection.t_star));
      return {rescore(step.logits), r.selection.t_star, r.selection.steps_executed};
    }
    case Method::suta_lm_offline: {
      const AdaptTrajectory traj = adapt_trajectory(am, u, cfg.tta);
      const SelectionResult r = select_step(traj, lm, cfg.select);
      return {rescore(traj.steps.at(static_cast<std::size_t>(r.t_star)).logits), r.t_star,
              r.steps_executed};
    }
    case Method::random_step: {
      const AdaptTrajectory traj = adapt_trajectory(am, u, cfg.tta);
      const SelectionResult r = select_random_step(traj, cfg.select.tau, utt_seed);
      return {rescore(traj.steps.at(static_cast<std::size_t>(r.t_star)).logits), r.t_star,
              r.steps_executed};
    }
    case Method::oracle: {
      const AdaptTrajectory traj = adapt_trajectory(am, u, cfg.tta);
      Outcome best;
      int best_edits = -1;
      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        Transcript hyp = rescore(traj.steps[t].logits);
        const int e = edit_distance<std::string>(u.reference, hyp);
        if (best_edits < 0 || e < best_edits) {
          best_edits = e;
          best.hypothesis = std::move(hyp);
          best.t_star = static_cast<int>(t);
        }
      }
      best.steps = steps_executed(traj);
      return best;
    }
  }
  throw InvalidArgument("unhandled method");
}

}  // namespace detail

/// Runs one method over a corpus. Utterances are processed independently
/// (episodic) and results are reduced in corpus order, so the worker count
/// never changes the numbers.
inline MethodReport run_method(Method method, const Corpus& corpus, const AcousticModel& am,
                               const NGramModel& lm, const MethodConfigs& cfg,
                               const std::string& corpus_name = "") {
  cfg.tta.validate();
  cfg.select.validate();
  for (const auto& u : corpus) {
    if (u.features.cols() != am.feature_dim())
      throw DimensionError("run_method: utterance '" + u.id + "' width does not match the model");
    if (u.reference.empty()) throw InvalidArgument("run_method: utterance '" + u.id + "' has no reference");
  }
  std::vector<UtteranceRecord> records(corpus.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    AcousticModel local = am;
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= corpus.size()) return;
      const Utterance& u = corpus[i];
      try {
        const auto t0 = std::chrono::steady_clock::now();
        detail::Outcome o = detail::run_one(method, local, u, lm, cfg, mix_seed(cfg.seed, i));
        const auto t1 = std::chrono::steady_clock::now();
        UtteranceRecord& r = records[i];
        r.id = u.id;
        r.frames = static_cast<int>(u.frames());
        r.ref_words = static_cast<int>(u.reference.size());
        const WerResult w = wer(u.reference, o.hypothesis);
        r.edits = w.edits;
        r.wer = w.rate;
        r.t_star = o.t_star;
        r.steps_executed = o.steps;
        r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        r.hypothesis = join_words(o.hypothesis);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = corpus.size();
        return;
      }
    }
  };
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  MethodReport rep;
  rep.method = to_string(method);
  rep.corpus = corpus_name;
  double steps = 0.0, selected = 0.0, wall = 0.0, frames = 0.0;
  for (const auto& r : records) {
    rep.total_edits += r.edits;
    rep.total_words += r.ref_words;
    selected += r.t_star;
    steps += r.steps_executed;
    wall += r.wall_seconds;
    frames += r.frames;
  }
  const double n = static_cast<double>(records.size());
  if (!records.empty()) {
    rep.corpus_wer = static_cast<double>(rep.total_edits) / rep.total_words;
    rep.avg_selected_step = selected / n;
    rep.avg_steps_executed = steps / n;
    rep.mean_wall_seconds = wall / n;
    rep.wall_per_audio_second = frames > 0 ? wall / (frames / cfg.frames_per_second) : 0.0;
  }
  rep.utterances = std::move(records);
  return rep;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParameter { tau, fixed_step, alpha };

inline SweepParameter parse_sweep_parameter(const std::string& s) {
  if (s == "tau") return SweepParameter::tau;
  if (s == "fixed_step") return SweepParameter::fixed_step;
  if (s == "alpha") return SweepParameter::alpha;
  throw InvalidArgument("unknown sweep parameter '" + s + "'");
}

inline std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::tau: return "tau";
    case SweepParameter::fixed_step: return "fixed_step";
    case SweepParameter::alpha: return "alpha";
  }
  return "?";
}

struct SweepRow {
  double value = 0.0;
  MethodReport report;
};

/// One run per value. fixed_step decodes theta_t with beam search (i.e.
/// suta_rescoring with N = t); tau runs `method` (default suta_lm) with the
/// given threshold; alpha runs `method` with the given LM weight.
inline std::vector<SweepRow> sweep(SweepParameter param, std::span<const double> values,
                                   const Corpus& corpus, const AcousticModel& am,
                                   const NGramModel& lm, const MethodConfigs& base,
                                   std::optional<Method> method = std::nullopt,
                                   const std::string& corpus_name = "") {
  if (values.empty()) throw InvalidArgument("sweep: no values");
  std::vector<SweepRow> rows;
  for (double v : values) {
    MethodConfigs cfg = base;
    Method m = method.value_or(Method::suta_lm);
    switch (param) {
      case SweepParameter::fixed_step:
        if (v < 0 || v != std::floor(v)) throw InvalidArgument("sweep: fixed_step must be a non-negative integer");
        cfg.tta.max_steps = static_cast<int>(v);
        m = Method::suta_rescoring;
        break;
      case SweepParameter::tau:
        cfg.select.tau = v;
        break;
      case SweepParameter::alpha:
        cfg.fusion.alpha = v;
        m = method.value_or(Method::rescoring);
        break;
    }
    rows.push_back({v, run_method(m, corpus, am, lm, cfg, corpus_name)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports

/// Wall-clock fields are only emitted with `with_timing`; everything else is
/// a deterministic function of the inputs and seeds.
inline nlohmann::json to_json(const MethodReport& r, bool with_timing = true) {
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : r.utterances) {
    nlohmann::json x = {{"id", u.id},
                        {"frames", u.frames},
                        {"ref_words", u.ref_words},
                        {"edits", u.edits},
                        {"wer", u.wer},
                        {"t_star", u.t_star},
                        {"steps_executed", u.steps_executed},
                        {"hypothesis", u.hypothesis}};
    if (with_timing) x["wall_seconds"] = u.wall_seconds;
    utts.push_back(std::move(x));
  }
  nlohmann::json j = {{"method", r.method},
                      {"corpus", r.corpus},
                      {"total_edits", r.total_edits},
                      {"total_words", r.total_words},
                      {"corpus_wer", r.corpus_wer},
                      {"avg_selected_step", r.avg_selected_step},
                      {"avg_steps_executed", r.avg_steps_executed},
                      {"utterances", std::move(utts)}};
  if (with_timing) {
    j["mean_wall_seconds"] = r.mean_wall_seconds;
    j["wall_per_audio_second"] = r.wall_per_audio_second;
  }
  return j;
}

inline MethodReport method_report_from_json(const nlohmann::json& j) {
  MethodReport r;
  r.method = j.at("method").get<std::string>();
  r.corpus = j.at("corpus").get<std::string>();
  r.total_edits = j.at("total_edits").get<int>();
  r.total_words = j.at("total_words").get<int>();
  r.corpus_wer = j.at("corpus_wer").get<double>();
  r.avg_selected_step = j.at("avg_selected_step").get<double>();
  r.avg_steps_executed = j.at("avg_steps_executed").get<double>();
  r.mean_wall_seconds = j.value("mean_wall_seconds", 0.0);
  r.wall_per_audio_second = j.value("wall_per_audio_second", 0.0);
  for (const auto& u : j.at("utterances")) {
    UtteranceRecord x;
    x.id = u.at("id").get<std::string>();
    x.frames = u.at("frames").get<int>();
    x.ref_words = u.at("ref_words").get<int>();
    x.edits = u.at("edits").get<int>();
    x.wer = u.at("wer").get<double>();
    x.t_star = u.at("t_star").get<int>();
    x.steps_executed = u.at("steps_executed").get<int>();
    x.wall_seconds = u.value("wall_seconds", 0.0);
    x.hypothesis = u.at("hypothesis").get<std::string>();
    r.utterances.push_back(std::move(x));
  }
  return r;
}

inline constexpr const char* kReportCsvHeader =
    "method,corpus,wer_percent,total_edits,total_words,avg_selected_step,avg_steps_executed,"
    "mean_wall_ms,wall_ms_per_audio_second";

/// One CSV row; timing columns are omitted (left empty) when `with_timing` is
/// false so that files stay byte-identical across runs.
inline void write_csv_row(std::ostream& os, const MethodReport& r, bool with_timing = true) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%d,%d,%.4f,%.4f,", r.method.c_str(), r.corpus.c_str(),
                100.0 * r.corpus_wer, r.total_edits, r.total_words, r.avg_selected_step,
                r.avg_steps_executed);
  os << buf;
  if (with_timing) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", 1e3 * r.mean_wall_seconds,
                  1e3 * r.wall_per_audio_second);
    os << buf;
  } else {
    os << ',';
  }
  os << '\n';
}

}  // namespace sutalm
