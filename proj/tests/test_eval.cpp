// tests/test_eval.cpp

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sutalm/config.hpp"
#include "sutalm/eval.hpp"

using namespace sutalm;

namespace {

struct World {
  RunConfig cfg = default_run_config();
  AcousticModel am;
  NGramModel lm;
  Corpus heavy, light;
  World() {
    cfg.test_utterances = 24;
    cfg.train_utterances = 200;
    am = make_acoustic_model(cfg, make_train_corpus(cfg, 2), 2);
    lm = make_lm(cfg, 2);
    auto sets = make_test_sets(cfg, 2);
    heavy = sets.at(0).corpus;
    light = sets.at(1).corpus;
  }
  MethodConfigs methods() const { return cfg.method_configs(2); }
};

const World& world() {
  static const World w;
  return w;
}

std::vector<std::string> hyps(const MethodReport& r) {
  std::vector<std::string> out;
  for (const auto& u : r.utterances) out.push_back(u.hypothesis);
  return out;
}

std::string dump(const MethodReport& r) { return to_json(r, false).dump(); }

}  // namespace

TEST(Wer, Examples) {
  using T = std::vector<std::string>;
  const auto same = wer(T{"a", "b"}, T{"a", "b"});
  EXPECT_EQ(same.edits, 0);
  EXPECT_EQ(same.rate, 0.0);
  const auto del = wer(T{"a", "b", "c"}, T{"a", "c"});
  EXPECT_EQ(del.edits, 1);
  EXPECT_DOUBLE_EQ(del.rate, 1.0 / 3.0);
  const auto swap = wer(T{"a", "b"}, T{"b", "a"});
  EXPECT_EQ(swap.edits, 2);
  EXPECT_DOUBLE_EQ(swap.rate, 1.0);
  EXPECT_EQ(wer(T{"a"}, T{}).edits, 1);
  EXPECT_EQ(wer(T{"a"}, T{"x", "y", "z"}).rate, 3.0);
  EXPECT_THROW(wer(T{}, T{"a"}), InvalidArgument);
}

TEST(Wer, MatchesEditGraphSearch) {
  const oracle::EditGraph g(2, 4);
  const auto& seqs = g.sequences();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto d = g.distances_from(static_cast<int>(i));
    for (std::size_t j = 0; j < seqs.size(); ++j)
      ASSERT_EQ(edit_distance<int>(seqs[i], seqs[j]), d[j]);
  }
}

TEST(Wer, SymmetricAndTriangle) {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> len(0, 7), tok(0, 3);
  auto draw = [&] {
    std::vector<int> s(static_cast<std::size_t>(len(rng)));
    for (int& t : s) t = tok(rng);
    return s;
  };
  for (int trial = 0; trial < 3000; ++trial) {
    const auto a = draw(), b = draw(), c = draw();
    const int ab = edit_distance<int>(a, b), ba = edit_distance<int>(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_LE(edit_distance<int>(a, c), ab + edit_distance<int>(b, c));
  }
}

TEST(RunMethod, RescoringEqualsZeroStepSelection) {
  const World& w = world();
  MethodConfigs m = w.methods();
  const auto rescoring = run_method(Method::rescoring, w.heavy, w.am, w.lm, m);
  m.tta.max_steps = 0;
  const auto degenerate = run_method(Method::suta_lm, w.heavy, w.am, w.lm, m);
  EXPECT_EQ(hyps(rescoring), hyps(degenerate));
  EXPECT_EQ(rescoring.total_edits, degenerate.total_edits);
  EXPECT_EQ(degenerate.avg_steps_executed, 0.0);
}

TEST(RunMethod, SutaRescoringEqualsAlwaysLastStep) {
  const World& w = world();
  MethodConfigs m = w.methods();
  const auto last = run_method(Method::suta_rescoring, w.light, w.am, w.lm, m);
  m.select.tau = kInf;  // nothing is valid, so selection falls back to step N
  const auto fallback = run_method(Method::suta_lm_offline, w.light, w.am, w.lm, m);
  EXPECT_EQ(hyps(last), hyps(fallback));
  for (const auto& u : fallback.utterances) EXPECT_EQ(u.t_star, m.tta.max_steps);
}

TEST(RunMethod, SourceAndSutaAreGreedy) {
  const World& w = world();
  const MethodConfigs m = w.methods();
  const auto src = run_method(Method::source, w.light, w.am, w.lm, m);
  const auto suta = run_method(Method::suta, w.light, w.am, w.lm, m);
  AcousticModel am = w.am;
  for (std::size_t i = 0; i < w.light.size(); ++i) {
    EXPECT_EQ(src.utterances[i].hypothesis, join_words(greedy_decode(forward(am, w.light[i]), am.alphabet)));
    const auto traj = adapt_trajectory(am, w.light[i], m.tta);
    EXPECT_EQ(suta.utterances[i].hypothesis, join_words(traj.steps.back().transcript));
    EXPECT_EQ(suta.utterances[i].steps_executed, m.tta.max_steps);
  }
}

TEST(RunMethod, OracleDominatesEveryFixedStep) {
  const World& w = world();
  const MethodConfigs m = w.methods();
  const auto oracle = run_method(Method::oracle, w.heavy, w.am, w.lm, m);
  std::vector<double> steps;
  for (int t = 0; t <= m.tta.max_steps; ++t) steps.push_back(t);
  const auto rows = sweep(SweepParameter::fixed_step, steps, w.heavy, w.am, w.lm, m);
  for (const auto& row : rows) {
    EXPECT_LE(oracle.total_edits, row.report.total_edits) << "step " << row.value;
    for (std::size_t i = 0; i < w.heavy.size(); ++i)
      EXPECT_LE(oracle.utterances[i].edits, row.report.utterances[i].edits);
  }
}

TEST(RunMethod, CorpusWerIsMicroAveraged) {
  const World& w = world();
  const auto r = run_method(Method::source, w.heavy, w.am, w.lm, w.methods());
  int edits = 0, words = 0;
  double steps = 0.0;
  for (const auto& u : r.utterances) {
    edits += u.edits;
    words += u.ref_words;
    steps += u.t_star;
  }
  EXPECT_EQ(r.total_edits, edits);
  EXPECT_EQ(r.total_words, words);
  EXPECT_DOUBLE_EQ(r.corpus_wer, static_cast<double>(edits) / words);
  EXPECT_DOUBLE_EQ(r.avg_selected_step, steps / static_cast<double>(r.utterances.size()));
  EXPECT_GE(r.corpus_wer, 0.0);
}

TEST(RunMethod, WorkerCountDoesNotChangeResults) {
  const World& w = world();
  MethodConfigs m = w.methods();
  for (Method method : {Method::suta_lm, Method::random_step}) {
    m.workers = 1;
    const std::string one = dump(run_method(method, w.heavy, w.am, w.lm, m));
    m.workers = 3;
    EXPECT_EQ(dump(run_method(method, w.heavy, w.am, w.lm, m)), one);
  }
}

TEST(RunMethod, ReportsAreReproducible) {
  const World& w = world();
  const MethodConfigs m = w.methods();
  for (Method method : kAllMethods) {
    if (method == Method::oracle) continue;
    const auto a = run_method(method, w.light, w.am, w.lm, m, "light");
    const auto b = run_method(method, w.light, w.am, w.lm, m, "light");
    EXPECT_EQ(dump(a), dump(b)) << to_string(method);
    std::ostringstream ca, cb;
    write_csv_row(ca, a, false);
    write_csv_row(cb, b, false);
    EXPECT_EQ(ca.str(), cb.str());
  }
}

TEST(RunMethod, RejectsBadInput) {
  const World& w = world();
  EXPECT_THROW(parse_method("sgem"), InvalidArgument);
  Corpus wrong = w.light;
  wrong[0].features = Matrix(5, 3);
  EXPECT_THROW(run_method(Method::source, wrong, w.am, w.lm, w.methods()), DimensionError);
  Corpus noref = w.light;
  noref[1].reference.clear();
  EXPECT_THROW(run_method(Method::source, noref, w.am, w.lm, w.methods()), InvalidArgument);
}

TEST(Sweep, ConsistencyRows) {
  const World& w = world();
  const MethodConfigs m = w.methods();
  const std::vector<double> zero{0.0};
  const auto fixed0 = sweep(SweepParameter::fixed_step, zero, w.light, w.am, w.lm, m);
  EXPECT_EQ(hyps(fixed0[0].report), hyps(run_method(Method::rescoring, w.light, w.am, w.lm, m)));

  const std::vector<double> no_tau{kNegInf};
  const auto tau = sweep(SweepParameter::tau, no_tau, w.light, w.am, w.lm, m);
  MethodReport no_threshold = run_method(Method::suta_lm_no_threshold, w.light, w.am, w.lm, m);
  no_threshold.method = tau[0].report.method;  // same numbers under a different label
  EXPECT_EQ(dump(tau[0].report), dump(no_threshold));

  const std::vector<double> one_alpha{0.5};
  const auto alpha = sweep(SweepParameter::alpha, one_alpha, w.light, w.am, w.lm, m);
  EXPECT_EQ(dump(alpha[0].report), dump(run_method(Method::rescoring, w.light, w.am, w.lm, m)));

  EXPECT_THROW(sweep(SweepParameter::tau, std::vector<double>{}, w.light, w.am, w.lm, m), InvalidArgument);
  EXPECT_THROW(sweep(SweepParameter::fixed_step, std::vector<double>{1.5}, w.light, w.am, w.lm, m),
               InvalidArgument);
  EXPECT_THROW(parse_sweep_parameter("beta"), InvalidArgument);
}

TEST(Report, JsonRoundTripAndCsv) {
  const World& w = world();
  const auto r = run_method(Method::suta_lm, w.light, w.am, w.lm, w.methods(), "light");
  const MethodReport back = method_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(dump(back), dump(r));
  EXPECT_EQ(back.mean_wall_seconds, r.mean_wall_seconds);
  std::ostringstream os;
  write_csv_row(os, r);
  const std::string row = os.str();
  EXPECT_EQ(row.rfind("suta_lm,light,", 0), 0u);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','),
            std::count(kReportCsvHeader, kReportCsvHeader + std::strlen(kReportCsvHeader), ','));
}
