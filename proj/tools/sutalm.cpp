// tools/sutalm.cpp
//
// Command-line driver. Artefacts live under --out, one directory per seed:
//   seed_<s>/train.jsonl, lm_text.txt, test_<domain>.jsonl   (synth)
//   seed_<s>/acoustic_model.json                             (train-am)
//   seed_<s>/lm.arpa                                         (train-lm)
//   seed_<s>/results.json, summary.csv, timing.csv           (run)
//   seed_<s>/sweep_<param>.csv, sweep_<param>.json           (sweep)
//   report.csv, report.json, sweep_<param>_report.csv        (report)
// Every command except report also writes config.effective.json.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "sutalm/sutalm.hpp"

namespace fs = std::filesystem;
using namespace sutalm;
using nlohmann::json;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kMissingFile = 4,
  kDimension = 5,
  kNoRuns = 6,
  kDiverged = 7,
};

// ---------------------------------------------------------------------------
// Logging: SUTALM_LOG_LEVEL = error | warn | info | debug (default info)

enum class Level { error = 0, warn, info, debug };

Level log_level() {
  static const Level level = [] {
    const char* v = std::getenv("SUTALM_LOG_LEVEL");
    const std::string s = v ? v : "info";
    if (s == "error") return Level::error;
    if (s == "warn") return Level::warn;
    if (s == "debug") return Level::debug;
    return Level::info;
  }();
  return level;
}

void log(Level lv, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (lv <= log_level()) std::cerr << "[" << names[static_cast<int>(lv)] << "] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Files

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
  log(Level::debug, "wrote " + path.string());
}

void require_file(const fs::path& p, const char* producer) {
  if (!fs::exists(p))
    throw IoError("missing '" + p.string() + "' (run `sutalm " + producer + "` first)");
}

std::vector<std::vector<std::string>> read_text(const fs::path& p) {
  require_file(p, "synth");
  std::ifstream in(p);
  std::vector<std::vector<std::string>> text;
  std::string line;
  while (std::getline(in, line)) text.push_back(split_words(line));
  return text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Options shared by every command

struct Options {
  std::string config;
  std::string out = "runs";
  std::vector<std::uint64_t> seeds;
  int workers = 0;
  std::vector<std::string> methods;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? default_run_config() : load_run_config(o.config);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (o.workers != 0) {
    if (o.workers < 1) throw ConfigError("--workers must be >= 1");
    c.workers = o.workers;
  }
  if (!o.methods.empty()) {
    for (const auto& m : o.methods) {
      try {
        parse_method(m);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
    }
    c.methods = o.methods;
  }
  return c;
}

fs::path seed_dir(const Options& o, std::uint64_t seed) {
  return fs::path(o.out) / ("seed_" + std::to_string(seed));
}

void write_effective_config(const Options& o, const RunConfig& c) {
  write_atomic(fs::path(o.out) / "config.effective.json", to_json(c).dump(2) + "\n");
}

struct World {
  AcousticModel am;
  NGramModel lm;
  std::vector<TestSet> tests;
};

World load_world(const RunConfig& c, const fs::path& dir) {
  World w;
  require_file(dir / "acoustic_model.json", "train-am");
  require_file(dir / "lm.arpa", "train-lm");
  w.am = load_acoustic_model((dir / "acoustic_model.json").string());
  w.lm = load_arpa((dir / "lm.arpa").string());
  for (const auto& d : c.domains) {
    const fs::path p = dir / ("test_" + d.name + ".jsonl");
    require_file(p, "synth");
    w.tests.push_back({d.name, load_corpus(p.string())});
  }
  return w;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(const Options& o) {
  const RunConfig c = resolve(o);
  write_effective_config(o, c);
  for (auto seed : c.seeds) {
    const fs::path dir = seed_dir(o, seed);
    std::ostringstream train;
    write_corpus(train, make_train_corpus(c, seed));
    write_atomic(dir / "train.jsonl", train.str());
    std::string text;
    for (const auto& s : make_lm_text(c, seed)) text += join_words(s) + "\n";
    write_atomic(dir / "lm_text.txt", text);
    for (const auto& t : make_test_sets(c, seed)) {
      std::ostringstream os;
      write_corpus(os, t.corpus);
      write_atomic(dir / ("test_" + t.domain + ".jsonl"), os.str());
      log(Level::info, "seed " + std::to_string(seed) + ": " + t.domain + " test set, " +
                           std::to_string(t.corpus.size()) + " utterances");
    }
  }
}

void cmd_train_am(const Options& o) {
  const RunConfig c = resolve(o);
  write_effective_config(o, c);
  for (auto seed : c.seeds) {
    const fs::path dir = seed_dir(o, seed);
    require_file(dir / "train.jsonl", "synth");
    const Corpus train = load_corpus((dir / "train.jsonl").string());
    const AcousticModel am = make_acoustic_model(c, train, seed);
    log(Level::info, "seed " + std::to_string(seed) + ": frame accuracy " +
                         fmt("%.4f", frame_accuracy(am, train)));
    write_atomic(dir / "acoustic_model.json", to_json(am).dump() + "\n");
  }
}

void cmd_train_lm(const Options& o) {
  const RunConfig c = resolve(o);
  write_effective_config(o, c);
  for (auto seed : c.seeds) {
    const fs::path dir = seed_dir(o, seed);
    const NGramModel lm = train_lm(read_text(dir / "lm_text.txt"), c.lm.order, c.lm.discount);
    std::ostringstream os;
    write_arpa(os, lm);
    write_atomic(dir / "lm.arpa", os.str());
    log(Level::info, "seed " + std::to_string(seed) + ": lm vocabulary " +
                         std::to_string(lm.vocabulary().size()));
  }
}

void cmd_run(const Options& o) {
  const RunConfig c = resolve(o);
  write_effective_config(o, c);
  for (auto seed : c.seeds) {
    const fs::path dir = seed_dir(o, seed);
    const World w = load_world(c, dir);
    const MethodConfigs mc = c.method_configs(seed);
    json results = json::array();
    std::ostringstream summary, timing;
    summary << kReportCsvHeader << '\n';
    timing << "method,corpus,mean_wall_ms,wall_ms_per_audio_second\n";
    for (const auto& t : w.tests) {
      for (const auto& name : c.methods) {
        const MethodReport r = run_method(parse_method(name), t.corpus, w.am, w.lm, mc, t.domain);
        log(Level::info, "seed " + std::to_string(seed) + " " + t.domain + " " + name + ": WER " +
                             fmt("%.2f", 100.0 * r.corpus_wer) + "%, steps " +
                             fmt("%.2f", r.avg_steps_executed));
        results.push_back(to_json(r, false));
        write_csv_row(summary, r, false);
        timing << r.method << ',' << r.corpus << ',' << fmt("%.6f", 1e3 * r.mean_wall_seconds) << ','
               << fmt("%.6f", 1e3 * r.wall_per_audio_second) << '\n';
      }
    }
    write_atomic(dir / "results.json", results.dump(1) + "\n");
    write_atomic(dir / "summary.csv", summary.str());
    write_atomic(dir / "timing.csv", timing.str());
  }
}

void cmd_sweep(const Options& o) {
  RunConfig c = resolve(o);
  if (c.sweep.values.empty()) throw ConfigError("sweep.values must not be empty");
  if (!o.methods.empty()) {
    if (o.methods.size() != 1) throw ConfigError("sweep takes at most one --method");
    c.sweep.method = o.methods[0];
  }
  write_effective_config(o, c);
  const SweepParameter param = parse_sweep_parameter(c.sweep.parameter);
  std::optional<Method> method;
  if (!c.sweep.method.empty()) method = parse_method(c.sweep.method);
  for (auto seed : c.seeds) {
    const fs::path dir = seed_dir(o, seed);
    const World w = load_world(c, dir);
    const MethodConfigs mc = c.method_configs(seed);
    std::ostringstream csv;
    csv << "parameter,value," << kReportCsvHeader << '\n';
    json rows = json::array();
    for (const auto& t : w.tests) {
      for (const auto& row : sweep(param, c.sweep.values, t.corpus, w.am, w.lm, mc, method, t.domain)) {
        csv << c.sweep.parameter << ',' << fmt("%.6g", row.value) << ',';
        write_csv_row(csv, row.report, false);
        rows.push_back({{"value", detail::write_extended(row.value)}, {"report", to_json(row.report, false)}});
        log(Level::info, "seed " + std::to_string(seed) + " " + t.domain + " " + c.sweep.parameter +
                             "=" + fmt("%g", row.value) + ": WER " +
                             fmt("%.2f", 100.0 * row.report.corpus_wer) + "%");
      }
    }
    write_atomic(dir / ("sweep_" + c.sweep.parameter + ".csv"), csv.str());
    write_atomic(dir / ("sweep_" + c.sweep.parameter + ".json"), rows.dump(1) + "\n");
  }
}

struct Stat {
  std::vector<double> xs;
  double mean() const {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  }
  double std() const {  // sample standard deviation; 0 for a single run
    if (xs.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
  }
};

std::map<std::string, double> read_timing(const fs::path& p) {
  std::map<std::string, double> out;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() >= 3) out[f[0] + "," + f[1]] = std::stod(f[2]);
  }
  return out;
}

/// Mean and standard deviation over seeds, per method and corpus, plus a
/// "combined" corpus pooling every domain of a seed.
void cmd_report(const Options& o) {
  const fs::path root(o.out);
  std::vector<fs::path> runs;
  if (fs::is_directory(root))
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 &&
          fs::exists(e.path() / "results.json"))
        runs.push_back(e.path());
  if (runs.empty()) {
    std::cerr << "sutalm: no runs found under '" << root.string() << "'\n";
    std::exit(kNoRuns);
  }
  std::sort(runs.begin(), runs.end());

  struct Acc {
    Stat wer, selected, executed, wall_ms;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  std::vector<std::pair<std::string, std::string>> order;
  auto slot = [&](const std::string& m, const std::string& c) -> Acc& {
    const auto key = std::make_pair(m, c);
    if (!acc.count(key)) order.push_back(key);
    return acc[key];
  };
  for (const auto& dir : runs) {
    std::ifstream in(dir / "results.json");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError((dir / "results.json").string() + ": " + e.what());
    }
    const auto timing = read_timing(dir / "timing.csv");
    std::map<std::string, std::array<double, 5>> pooled;  // edits, words, selected, executed, wall
    std::map<std::string, int> domains;
    for (const auto& rj : j) {
      const MethodReport r = method_report_from_json(rj);
      const auto t = timing.find(r.method + "," + r.corpus);
      const double wall = t == timing.end() ? 0.0 : t->second;
      Acc& a = slot(r.method, r.corpus);
      a.wer.xs.push_back(100.0 * r.corpus_wer);
      a.selected.xs.push_back(r.avg_selected_step);
      a.executed.xs.push_back(r.avg_steps_executed);
      a.wall_ms.xs.push_back(wall);
      auto& p = pooled[r.method];
      const double n = static_cast<double>(r.utterances.size());
      p[0] += r.total_edits;
      p[1] += r.total_words;
      p[2] += r.avg_selected_step * n;
      p[3] += r.avg_steps_executed * n;
      p[4] += wall * n;
      domains[r.method] += static_cast<int>(r.utterances.size());
    }
    for (const auto& [m, p] : pooled) {
      if (p[1] <= 0) continue;
      const double n = domains[m];
      Acc& a = slot(m, "combined");
      a.wer.xs.push_back(100.0 * p[0] / p[1]);
      a.selected.xs.push_back(p[2] / n);
      a.executed.xs.push_back(p[3] / n);
      a.wall_ms.xs.push_back(p[4] / n);
    }
  }

  std::ostringstream csv;
  csv << "method,corpus,seeds,wer_mean,wer_std,avg_selected_step,avg_steps_executed,mean_wall_ms\n";
  json rep = json::array();
  std::printf("%-22s %-10s %10s %8s %8s %8s %10s\n", "method", "corpus", "WER%", "std", "t*", "steps", "ms/utt");
  for (const auto& key : order) {
    const Acc& a = acc[key];
    csv << key.first << ',' << key.second << ',' << a.wer.xs.size() << ',' << fmt("%.4f", a.wer.mean())
        << ',' << fmt("%.4f", a.wer.std()) << ',' << fmt("%.4f", a.selected.mean()) << ','
        << fmt("%.4f", a.executed.mean()) << ',' << fmt("%.6f", a.wall_ms.mean()) << '\n';
    rep.push_back({{"method", key.first},
                   {"corpus", key.second},
                   {"seeds", a.wer.xs.size()},
                   {"wer_percent_mean", a.wer.mean()},
                   {"wer_percent_std", a.wer.std()},
                   {"avg_selected_step", a.selected.mean()},
                   {"avg_steps_executed", a.executed.mean()},
                   {"mean_wall_ms", a.wall_ms.mean()}});
    std::printf("%-22s %-10s %10.2f %8.2f %8.2f %8.2f %10.3f\n", key.first.c_str(), key.second.c_str(),
                a.wer.mean(), a.wer.std(), a.selected.mean(), a.executed.mean(), a.wall_ms.mean());
  }
  write_atomic(root / "report.csv", csv.str());
  write_atomic(root / "report.json", rep.dump(2) + "\n");

  // Sweep curves: mean WER per parameter value and corpus.
  std::map<std::string, std::map<std::pair<std::string, double>, Stat>> curves;
  for (const auto& dir : runs)
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("sweep_", 0) != 0 || e.path().extension() != ".json") continue;
      const std::string param = name.substr(6, name.size() - 11);
      std::ifstream in(e.path());
      json rows;
      in >> rows;
      for (const auto& row : rows) {
        const double v = detail::read_extended(row.at("value"), name);
        const MethodReport r = method_report_from_json(row.at("report"));
        curves[param][{r.corpus, v}].xs.push_back(100.0 * r.corpus_wer);
      }
    }
  for (const auto& [param, points] : curves) {
    std::ostringstream os;
    os << "parameter,corpus,value,seeds,wer_mean,wer_std\n";
    for (const auto& [k, s] : points)
      os << param << ',' << k.first << ',' << fmt("%.6g", k.second) << ',' << s.xs.size() << ','
         << fmt("%.4f", s.mean()) << ',' << fmt("%.4f", s.std()) << '\n';
    write_atomic(root / ("sweep_" + param + "_report.csv"), os.str());
  }
  log(Level::info, "report over " + std::to_string(runs.size()) + " seed(s) written to " + root.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SUTA-LM test-time adaptation lab"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON run configuration");
  app.add_option("--out", o.out, "output directory")->capture_default_str();
  app.add_option("--seed", o.seeds, "seed (repeatable; overrides eval.seeds)")->take_all();
  app.add_option("--workers", o.workers, "worker threads (overrides eval.workers)");
  app.add_option("--method", o.methods, "method (repeatable; overrides eval.methods)")->take_all();
  app.fallthrough();

  struct Cmd {
    const char* name;
    const char* help;
    void (*fn)(const Options&);
  };
  const Cmd cmds[] = {
      {"synth", "generate training, LM and test corpora", cmd_synth},
      {"train-am", "train the source acoustic model", cmd_train_am},
      {"train-lm", "train the n-gram language model", cmd_train_lm},
      {"run", "evaluate methods on every domain", cmd_run},
      {"sweep", "sweep tau, fixed_step or alpha", cmd_sweep},
      {"report", "aggregate runs over seeds", cmd_report},
  };
  void (*chosen)(const Options&) = nullptr;
  for (const auto& c : cmds) app.add_subcommand(c.name, c.help)->callback([&chosen, fn = c.fn] { chosen = fn; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    chosen(o);
  } catch (const DimensionError& e) {
    std::cerr << "sutalm: dimension mismatch: " << e.what() << '\n';
    return kDimension;
  } catch (const IoError& e) {
    std::cerr << "sutalm: missing file: " << e.what() << '\n';
    return kMissingFile;
  } catch (const ConfigError& e) {
    std::cerr << "sutalm: invalid config: " << e.what() << '\n';
    return kConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "sutalm: invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "sutalm: diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "sutalm: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
