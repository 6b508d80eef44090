// tests/acceptance.cpp
//
// One PASS/FAIL line per acceptance criterion; exit status is the number of
// failures.

#include <chrono>
#include <cstdio>
#include <random>
#include <map>

#include "oracles.hpp"
#include "sutalm/sutalm.hpp"

using namespace sutalm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Alphabet alphabet_for(std::size_t classes) { return Alphabet(std::string("abcdefgh").substr(0, classes - 2)); }

// ---------------------------------------------------------------------------

void ac1_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  const int n = 200;
  for (int trial = 0; trial < n; ++trial) {
    const std::size_t L = 1 + rng() % 8, C = 2 + rng() % 5, F = 1 + rng() % 8;
    TtaConfig cfg;
    cfg.temperature = 0.5 + 2.5 * u(rng);
    cfg.entropy_weight = u(rng);
    cfg.mcc_weight = u(rng);
    AcousticModel m = make_model(alphabet_for(C), F);
    m.weights = oracle::random_matrix(rng, F, C);
    std::normal_distribution<double> nd(0.0, 0.5);
    for (double& v : m.bias) v = nd(rng);
    for (double& v : m.gamma) v = 1.0 + nd(rng);
    for (double& v : m.shift) v = nd(rng);
    const Matrix x = oracle::random_matrix(rng, L, F);

    auto loss_of = [&](const LogitMatrix& z) {
      return oracle::suta_loss_value(z, cfg.temperature, cfg.entropy_weight, cfg.mcc_weight);
    };
    LogitMatrix z = forward(m, x);
    const LossResult r = suta_loss(z, cfg);
    const auto fd_z = oracle::central_difference(z.data(), [&] { return loss_of(z); }, 1e-5);
    worst = std::max(worst, oracle::relative_error(r.grad.data(), fd_z));

    const AffineGrad g = affine_gradient(m, x, r.grad);
    auto through_params = [&] { return loss_of(oracle::naive_forward(x, m.gamma, m.shift, m.weights, m.bias)); };
    worst = std::max(worst, oracle::relative_error(g.gamma, oracle::central_difference(m.gamma, through_params, 1e-5)));
    worst = std::max(worst, oracle::relative_error(g.shift, oracle::central_difference(m.shift, through_params, 1e-5)));
  }
  const double secs = seconds_since(t0);
  verdict("AC1", worst <= 1e-4 && secs < 10.0,
          fmt("gradient vs central differences: %.0f instances, worst relative error %.2e, %.2fs", n, worst, secs));
}

void ac2_decoder() {
  std::mt19937_64 rng(102);
  FusionConfig exhaustive;
  exhaustive.alpha = 0.0;
  exhaustive.beta = 0.0;
  exhaustive.beam_width = 1 << 20;
  exhaustive.n_best = 1 << 20;
  int plain_ok = 0;
  const int plain_n = 200;
  for (int trial = 0; trial < plain_n; ++trial) {
    const std::size_t L = 1 + rng() % 5, C = 2 + rng() % 3;
    const Alphabet a = alphabet_for(C);
    const LogitMatrix z = oracle::random_logits(rng, L, C);
    const auto truth = oracle::ctc_label_logprobs(z, a);
    std::string best;
    double best_lp = kNegInf;
    for (const auto& [text, lp] : truth)  // map order gives a lexicographic tie-break
      if (lp > best_lp) best = text, best_lp = lp;
    const auto top = beam_search(z, a, nullptr, exhaustive).at(0);
    plain_ok += top.text == best && std::abs(top.score - best_lp) <= 1e-9;
  }

  // Constructed fused instances: a small word LM and frames biased toward
  // word-like paths so several multi-word hypotheses compete.
  const NGramModel lm = train_lm({{"a", "b"}, {"ab"}, {"b", "a", "b"}, {"ab", "a"}, {"ba"}}, 2, 0.5);
  const Alphabet ab("ab");
  int fused_ok = 0;
  const int fused_n = 40;
  for (int trial = 0; trial < fused_n; ++trial) {
    const std::size_t L = 2 + rng() % 3;
    LogitMatrix z = oracle::random_logits(rng, L, 4);
    z(rng() % L, 2 + rng() % 2) += 2.0;
    FusionConfig f = exhaustive;
    f.alpha = 0.5;
    f.beta = trial % 2 ? 0.0 : 0.5;
    const auto truth = oracle::fused_ranking(z, ab, &lm, f.alpha, f.beta);
    const auto out = beam_search(z, ab, &lm, f);
    bool same = out.size() == truth.size();
    for (std::size_t i = 0; same && i < out.size(); ++i)
      same = out[i].text == truth[i].text && std::abs(out[i].score - truth[i].score) <= 1e-9;
    fused_ok += same;
  }
  verdict("AC2", plain_ok == plain_n && fused_ok == fused_n,
          fmt("beam search vs brute force: %.0f/%.0f top-1 match (alpha=0), %.0f/%.0f fused rankings match",
              plain_ok, plain_n, fused_ok, fused_n));
}

void ac3_selection() {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 5000;
  int ok = 0, empty_sets = 0, ties = 0;
  for (int trial = 0; trial < n; ++trial) {
    const std::size_t N = 1 + rng() % 25;
    std::vector<double> S(N), lm(N);
    for (auto& s : S) s = -0.2 * u(rng);
    // Coarse LM scores so ties are common.
    const int levels = 1 + static_cast<int>(rng() % 4);
    for (auto& l : lm) l = -static_cast<double>(rng() % static_cast<unsigned>(levels));
    const double tau = trial % 10 == 0 ? 1.0 : -0.2 * u(rng);

    bool good = true;
    std::vector<int> expect_set;
    for (std::size_t t = 0; t < N; ++t)
      if (S[t] >= tau) expect_set.push_back(static_cast<int>(t));
    good &= threshold_steps(S, tau) == expect_set;
    empty_sets += expect_set.empty();

    const int t_star = select_from_scores(S, lm, tau);
    good &= t_star == oracle::select_reference(S, lm, tau);
    if (expect_set.empty()) {
      good &= t_star == static_cast<int>(N) - 1;
    } else {
      // Argmax over the valid set, earliest among equals.
      const double best = lm[static_cast<std::size_t>(t_star)];
      for (int t : expect_set) {
        good &= lm[static_cast<std::size_t>(t)] <= best;
        if (t < t_star) good &= lm[static_cast<std::size_t>(t)] < best;
        ties += t > t_star && lm[static_cast<std::size_t>(t)] == best;
      }
    }

    // Strictly increasing transforms of both scores (tau mapped alongside).
    std::vector<double> S2(N), lm2(N);
    for (std::size_t t = 0; t < N; ++t) {
      S2[t] = std::exp(3.0 * S[t]) - 7.0;
      lm2[t] = 2.5 * lm[t] + std::tanh(lm[t]) + 4.0;
    }
    good &= select_from_scores(S2, lm2, std::exp(3.0 * tau) - 7.0) == t_star;

    const int P = 1 + static_cast<int>(rng() % 5);
    good &= early_stop_from_scores(S, lm, tau, P) == oracle::early_stop_reference(S, lm, tau, P);
    ok += good;
  }
  verdict("AC3", ok == n,
          fmt("selection rules: %.0f/%.0f trajectories agree (%.0f empty valid sets, %.0f ties broken early)",
              ok, n, empty_sets, ties));
}

void ac4_online_offline() {
  RunConfig c = default_run_config();
  c.train_utterances = 300;
  c.test_utterances = 200;
  const std::uint64_t seed = 4;
  const AcousticModel source = make_acoustic_model(c, make_train_corpus(c, seed), seed);
  const NGramModel lm = make_lm(c, seed);
  const Corpus corpus = make_test_sets(c, seed).at(0).corpus;
  SelectConfig sel = c.select;
  sel.patience = c.tta.max_steps;
  AcousticModel am = source;
  int same = 0;
  for (const auto& u : corpus) {
    const int offline = select_step(adapt_trajectory(am, u, c.tta), lm, sel).t_star;
    const int online = select_step_online(am, u, lm, c.tta, sel).selection.t_star;
    same += offline == online;
  }
  verdict("AC4", same == static_cast<int>(corpus.size()) && corpus.size() == 200,
          fmt("online vs offline with P=N=%.0f: %.0f/%.0f utterances agree", c.tta.max_steps, same,
              static_cast<double>(corpus.size())));
}

void ac5_wer() {
  const oracle::EditGraph g(3, 6);
  const auto& seqs = g.sequences();
  long long pairs = 0, ok = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto d = g.distances_from(static_cast<int>(i));
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      ++pairs;
      ok += edit_distance<int>(seqs[i], seqs[j]) == d[j];
    }
  }
  verdict("AC5", ok == pairs,
          fmt("edit distance vs edit-script search: %.0f/%.0f pairs over %.0f sequences", static_cast<double>(ok),
              static_cast<double>(pairs), static_cast<double>(seqs.size())));
}

void ac6_lm() {
  RunConfig c = default_run_config();
  c.lm.order = 3;
  const NGramModel lm = make_lm(c, 6);
  double worst_mass = 0.0;
  const auto hs = oracle::reachable_histories(lm);
  for (const auto& h : hs) worst_mass = std::max(worst_mass, std::abs(oracle::history_mass(lm, h) - 1.0));

  std::mt19937_64 rng(106);
  auto words = c.corpus.vocabulary;
  words.push_back("zzz");
  double worst_fold = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::string> y(rng() % 12);
    for (auto& w : y) w = words[rng() % words.size()];
    LmState s = lm.begin_state();
    double total = 0.0;
    for (const auto& w : y) {
      auto [next, lp] = score_incremental(lm, s, w);
      total += lp;
      s = next;
    }
    total += lm.end_score(s);
    worst_fold = std::max({worst_fold, std::abs(total - score_sequence(lm, y)),
                           std::abs(total - oracle::lm_sentence_logprob(lm, y))});
  }
  const bool small_vocab = c.corpus.vocabulary.size() <= 20;
  verdict("AC6", worst_mass <= 1e-9 && worst_fold <= 1e-12 && small_vocab,
          fmt("order-3 LM, %.0f histories: max |mass-1| %.1e; incremental vs batch max diff %.1e",
              static_cast<double>(hs.size()), worst_mass, worst_fold));
}

// ---------------------------------------------------------------------------
// Benchmark criteria on the default configuration, seeds 1-3.

struct DomainRuns {
  std::map<std::string, std::vector<double>> wer;  // method -> per-seed WER (%)
  std::map<std::string, std::vector<double>> steps, wall;
  std::vector<std::vector<double>> sweep;  // step -> per-seed WER
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void benchmark() {
  const auto t0 = Clock::now();
  const RunConfig c = default_run_config();
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const std::vector<Method> methods{Method::rescoring, Method::suta_rescoring, Method::suta_lm,
                                    Method::suta_lm_offline, Method::random_step, Method::oracle};
  std::vector<double> steps;
  for (int t = 0; t <= c.tta.max_steps; ++t) steps.push_back(t);

  std::map<std::string, DomainRuns> runs;
  for (auto seed : seeds) {
    const AcousticModel am = make_acoustic_model(c, make_train_corpus(c, seed), seed);
    const NGramModel lm = make_lm(c, seed);
    const MethodConfigs mc = c.method_configs(seed);
    for (const auto& t : make_test_sets(c, seed)) {
      DomainRuns& d = runs[t.domain];
      for (Method m : methods) {
        const MethodReport r = run_method(m, t.corpus, am, lm, mc, t.domain);
        d.wer[to_string(m)].push_back(100.0 * r.corpus_wer);
        d.steps[to_string(m)].push_back(r.avg_steps_executed);
        d.wall[to_string(m)].push_back(r.mean_wall_seconds);
      }
      const auto rows = sweep(SweepParameter::fixed_step, steps, t.corpus, am, lm, mc);
      d.sweep.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) d.sweep[i].push_back(100.0 * rows[i].report.corpus_wer);
    }
  }

  std::printf("-- benchmark (default config, seeds 1-3, %.1fs)\n", seconds_since(t0));
  for (const auto& [domain, d] : runs) {
    std::printf("   %-6s", domain.c_str());
    for (const auto& [m, v] : d.wer) std::printf("  %s %.2f", m.c_str(), mean(v));
    std::printf("\n   %-6s sweep", domain.c_str());
    for (std::size_t i = 0; i < d.sweep.size(); ++i) std::printf(" %zu:%.2f", i, mean(d.sweep[i]));
    std::printf("\n");
  }

  auto argmin = [](const DomainRuns& d) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.sweep.size(); ++i)
      if (mean(d.sweep[i]) < mean(d.sweep[best])) best = i;
    return static_cast<double>(best);
  };
  const DomainRuns& heavy = runs.at("heavy");
  const DomainRuns& light = runs.at("light");
  verdict("AC7", argmin(heavy) > argmin(light),
          fmt("fixed-step sweep argmin: heavy %.0f, light %.0f (WER %.2f vs %.2f)", argmin(heavy), argmin(light),
              mean(heavy.sweep[static_cast<std::size_t>(argmin(heavy))]),
              mean(light.sweep[static_cast<std::size_t>(argmin(light))])));

  // Combined benchmark: unweighted mean over domains, then over seeds.
  auto combined = [&](const std::string& m) {
    double s = 0.0;
    for (const auto& [domain, d] : runs) s += mean(d.wer.at(m));
    return s / static_cast<double>(runs.size());
  };
  const double oracle = combined("oracle"), lm = combined("suta_lm"), last = combined("suta_rescoring"),
               resc = combined("rescoring");
  verdict("AC8", oracle <= lm && lm <= std::max(last, resc) && lm <= last + 0.5,
          fmt("combined WER: oracle %.2f <= suta_lm %.2f <= max(suta_rescoring %.2f, rescoring %.2f)", oracle, lm,
              last, resc));

  const double steps_light = mean(light.steps.at("suta_lm"));
  const double wall_lm = mean(light.wall.at("suta_lm")), wall_last = mean(light.wall.at("suta_rescoring"));
  const double gap = std::abs(mean(light.wer.at("suta_lm")) - mean(light.wer.at("suta_lm_offline")));
  verdict("AC9", steps_light < c.tta.max_steps && wall_lm < wall_last && gap <= 0.2,
          fmt("light: avg steps %.2f < 20; wall %.3f ms < %.3f ms; |suta_lm - offline| = %.2f points", steps_light,
              1e3 * wall_lm, 1e3 * wall_last, gap));

  const double rnd = mean(light.wer.at("random_step")), sel = mean(light.wer.at("suta_lm"));
  verdict("AC10", rnd >= sel, fmt("light WER: random_step %.2f >= suta_lm %.2f", rnd, sel));
}

}  // namespace

int main() {
  ac1_gradients();
  ac2_decoder();
  ac3_selection();
  ac4_online_offline();
  ac5_wer();
  ac6_lm();
  benchmark();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
