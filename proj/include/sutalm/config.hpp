// sutalm/config.hpp

// Run configuration: one nested JSON document covering corpus synthesis,
// model training, adaptation, decoding, selection and evaluation. Unknown
// keys are rejected. Also builds the per-seed "world" (training data,
// models and shifted test sets) that every command works from.

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sutalm/acoustic.hpp"
#include "sutalm/corpus.hpp"
#include "sutalm/eval.hpp"
#include "sutalm/lm.hpp"

namespace sutalm {

struct Domain {
  std::string name;
  std::vector<Corruption> corruptions;
};

struct LmTrainConfig {
  int order = 3;
  double discount = 0.7;
  int sentences = 2000;
};

struct SweepConfig {
  std::string parameter = "fixed_step";
  std::vector<double> values;
  std::string method;  // empty: parameter default
};

struct RunConfig {
  CorpusSpec corpus;
  int train_utterances = 400;
  int test_utterances = 150;
  int max_frames = 400;
  std::vector<Domain> domains;
  TrainConfig acoustic;
  LmTrainConfig lm;
  TtaConfig tta;
  FusionConfig fusion;
  SelectConfig select;
  std::vector<std::string> methods{"source",  "suta",          "rescoring",
                                   "suta_rescoring", "suta_lm", "suta_lm_offline",
                                   "suta_lm_no_threshold", "random_step", "oracle"};
  std::vector<std::uint64_t> seeds{1};
  double frames_per_second = 50.0;
  int workers = 1;
  SweepConfig sweep;

  MethodConfigs method_configs(std::uint64_t seed) const {
    MethodConfigs m;
    m.tta = tta;
    m.select = select;
    m.fusion = fusion;
    m.seed = mix_seed(seed, 0x5e1ec7);
    m.frames_per_second = frames_per_second;
    m.workers = workers;
    return m;
  }
};

/// Default world: a 20-word vocabulary over 13 letters with many one-letter
/// neighbours, so acoustic confusions are common and the LM can repair them.
inline RunConfig default_run_config() {
  RunConfig c;
  c.corpus.vocabulary = {"bad", "bed", "bid", "bog", "dig", "dog", "gas", "kid", "lab", "lid",
                         "log", "man", "men", "mob", "nod", "sat", "set", "sit", "tag", "ten"};
  c.corpus.letters = "abdegiklmnost";
  c.domains = {
      {"heavy", {{CorruptionKind::gaussian, 0.0, 0.0, 0.9, 101}}},
      {"light", {{CorruptionKind::gaussian, 20.0, 0.0, 0.9, 202}}},
  };
  return c;
}

namespace detail {

/// Reads keys out of a JSON object and rejects any that were not consumed.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~StrictObject() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  const std::string& where() const { return where_; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_range(StrictObject& o, const char* key, IntRange& r) {
  std::vector<int> v{r.lo, r.hi};
  o.get(key, v);
  if (v.size() != 2) throw ConfigError(o.where() + "." + key + ": expected [lo, hi]");
  r = {v[0], v[1]};
}

/// JSON has no infinity literal; accept numbers or the strings "inf"/"-inf".
inline double read_extended(const nlohmann::json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return kNegInf;
  }
  throw ConfigError(where + ": expected a number, \"inf\" or \"-inf\"");
}

inline nlohmann::json write_extended(double v) {
  if (v == kInf) return "inf";
  if (v == kNegInf) return "-inf";
  return v;
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::StrictObject;
  RunConfig c = default_run_config();
  StrictObject root(j, "config");
  if (auto* p = root.child("corpus")) {
    StrictObject o(*p, "corpus");
    o.get("vocabulary", c.corpus.vocabulary);
    o.get("letters", c.corpus.letters);
    detail::read_range(o, "sentence_length", c.corpus.sentence_length);
    detail::read_range(o, "frames_per_token", c.corpus.frames_per_token);
    detail::read_range(o, "blank_frames", c.corpus.blank_frames);
    o.get("feature_dim", c.corpus.feature_dim);
    o.get("embedding_scale", c.corpus.embedding_scale);
    o.get("embedding_seed", c.corpus.embedding_seed);
    o.get("grammar_branching", c.corpus.grammar_branching);
    o.get("grammar_seed", c.corpus.grammar_seed);
    o.get("train_utterances", c.train_utterances);
    o.get("test_utterances", c.test_utterances);
    o.get("max_frames", c.max_frames);
  }
  if (auto* p = root.child("domains")) {
    if (!p->is_array()) throw ConfigError("domains: expected an array");
    c.domains.clear();
    for (std::size_t i = 0; i < p->size(); ++i) {
      const std::string where = "domains[" + std::to_string(i) + "]";
      StrictObject o(p->at(i), where);
      Domain d;
      o.get("name", d.name);
      if (d.name.empty()) throw ConfigError(where + ": missing name");
      if (auto* cs = o.child("corruptions")) {
        for (std::size_t k = 0; k < cs->size(); ++k) {
          const std::string cw = where + ".corruptions[" + std::to_string(k) + "]";
          StrictObject co(cs->at(k), cw);
          Corruption cr;
          std::string kind = "gaussian";
          co.get("kind", kind);
          try {
            cr.kind = parse_corruption_kind(kind);
          } catch (const InvalidArgument& e) {
            throw ConfigError(cw + ": " + e.what());
          }
          if (auto* snr = co.child("snr_db")) cr.snr_db = detail::read_extended(*snr, cw + ".snr_db");
          co.get("magnitude", cr.magnitude);
          co.get("dc_fraction", cr.dc_fraction);
          co.get("seed", cr.seed);
          d.corruptions.push_back(cr);
        }
      }
      c.domains.push_back(std::move(d));
    }
  }
  if (auto* p = root.child("acoustic")) {
    StrictObject o(*p, "acoustic");
    o.get("epochs", c.acoustic.epochs);
    o.get("learning_rate", c.acoustic.learning_rate);
    o.get("batch_size", c.acoustic.batch_size);
    o.get("init_scale", c.acoustic.init_scale);
  }
  if (auto* p = root.child("lm")) {
    StrictObject o(*p, "lm");
    o.get("order", c.lm.order);
    o.get("discount", c.lm.discount);
    o.get("sentences", c.lm.sentences);
  }
  if (auto* p = root.child("tta")) {
    StrictObject o(*p, "tta");
    o.get("max_steps", c.tta.max_steps);
    o.get("learning_rate", c.tta.learning_rate);
    o.get("temperature", c.tta.temperature);
    o.get("entropy_weight", c.tta.entropy_weight);
    o.get("mcc_weight", c.tta.mcc_weight);
    std::string opt = to_string(c.tta.optimizer);
    o.get("optimizer", opt);
    try {
      c.tta.optimizer = parse_optimizer(opt);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("tta.optimizer: ") + e.what());
    }
    o.get("beta1", c.tta.beta1);
    o.get("beta2", c.tta.beta2);
    o.get("epsilon", c.tta.epsilon);
  }
  if (auto* p = root.child("fusion")) {
    StrictObject o(*p, "fusion");
    o.get("alpha", c.fusion.alpha);
    o.get("beta", c.fusion.beta);
    o.get("beam_width", c.fusion.beam_width);
    o.get("n_best", c.fusion.n_best);
    o.get("score_sentence_end", c.fusion.score_sentence_end);
    if (auto* f = o.child("logit_floor"); f && !f->is_null()) {
      if (!f->is_number()) throw ConfigError("fusion.logit_floor: expected a number or null");
      c.fusion.logit_floor = f->get<double>();
    }
  }
  if (auto* p = root.child("select")) {
    StrictObject o(*p, "select");
    if (auto* t = o.child("tau")) c.select.tau = detail::read_extended(*t, "select.tau");
    o.get("patience", c.select.patience);
    o.get("include_sentence_end", c.select.include_sentence_end);
  }
  if (auto* p = root.child("eval")) {
    StrictObject o(*p, "eval");
    o.get("methods", c.methods);
    o.get("seeds", c.seeds);
    o.get("frames_per_second", c.frames_per_second);
    o.get("workers", c.workers);
  }
  if (auto* p = root.child("sweep")) {
    StrictObject o(*p, "sweep");
    o.get("parameter", c.sweep.parameter);
    if (auto* v = o.child("values")) {
      if (!v->is_array()) throw ConfigError("sweep.values: expected an array");
      c.sweep.values.clear();
      for (const auto& x : *v) c.sweep.values.push_back(detail::read_extended(x, "sweep.values"));
    }
    o.get("method", c.sweep.method);
  }

  try {
    c.corpus.validate();
    c.tta.validate();
    c.select.validate();
    for (const auto& m : c.methods) parse_method(m);
    parse_sweep_parameter(c.sweep.parameter);
    if (!c.sweep.method.empty()) parse_method(c.sweep.method);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (c.lm.order < 1 || c.lm.order > kMaxLmOrder) throw ConfigError("lm.order out of range");
  if (c.fusion.beam_width < 1 || c.fusion.n_best < 1) throw ConfigError("fusion: beam_width and n_best must be >= 1");
  if (c.max_frames < 1) throw ConfigError("corpus.max_frames must be >= 1");
  if (c.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  if (c.workers < 1) throw ConfigError("eval.workers must be >= 1");
  if (c.frames_per_second <= 0) throw ConfigError("eval.frames_per_second must be positive");
  return c;
}

/// Fully resolved configuration; re-reading it yields the same RunConfig.
inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json domains = json::array();
  for (const auto& d : c.domains) {
    json cs = json::array();
    for (const auto& cr : d.corruptions)
      cs.push_back({{"kind", to_string(cr.kind)},
                    {"snr_db", detail::write_extended(cr.snr_db)},
                    {"magnitude", cr.magnitude},
                    {"dc_fraction", cr.dc_fraction},
                    {"seed", cr.seed}});
    domains.push_back({{"name", d.name}, {"corruptions", std::move(cs)}});
  }
  json sweep_values = json::array();
  for (double v : c.sweep.values) sweep_values.push_back(detail::write_extended(v));
  return {
      {"corpus",
       {{"vocabulary", c.corpus.vocabulary},
        {"letters", c.corpus.letters},
        {"sentence_length", {c.corpus.sentence_length.lo, c.corpus.sentence_length.hi}},
        {"frames_per_token", {c.corpus.frames_per_token.lo, c.corpus.frames_per_token.hi}},
        {"blank_frames", {c.corpus.blank_frames.lo, c.corpus.blank_frames.hi}},
        {"feature_dim", c.corpus.feature_dim},
        {"embedding_scale", c.corpus.embedding_scale},
        {"embedding_seed", c.corpus.embedding_seed},
        {"grammar_branching", c.corpus.grammar_branching},
        {"grammar_seed", c.corpus.grammar_seed},
        {"train_utterances", c.train_utterances},
        {"test_utterances", c.test_utterances},
        {"max_frames", c.max_frames}}},
      {"domains", std::move(domains)},
      {"acoustic",
       {{"epochs", c.acoustic.epochs},
        {"learning_rate", c.acoustic.learning_rate},
        {"batch_size", c.acoustic.batch_size},
        {"init_scale", c.acoustic.init_scale}}},
      {"lm", {{"order", c.lm.order}, {"discount", c.lm.discount}, {"sentences", c.lm.sentences}}},
      {"tta",
       {{"max_steps", c.tta.max_steps},
        {"learning_rate", c.tta.learning_rate},
        {"temperature", c.tta.temperature},
        {"entropy_weight", c.tta.entropy_weight},
        {"mcc_weight", c.tta.mcc_weight},
        {"optimizer", to_string(c.tta.optimizer)},
        {"beta1", c.tta.beta1},
        {"beta2", c.tta.beta2},
        {"epsilon", c.tta.epsilon}}},
      {"fusion",
       {{"alpha", c.fusion.alpha},
        {"beta", c.fusion.beta},
        {"beam_width", c.fusion.beam_width},
        {"n_best", c.fusion.n_best},
        {"score_sentence_end", c.fusion.score_sentence_end},
        {"logit_floor", c.fusion.logit_floor ? json(*c.fusion.logit_floor) : json()}}},
      {"select",
       {{"tau", detail::write_extended(c.select.tau)},
        {"patience", c.select.patience},
        {"include_sentence_end", c.select.include_sentence_end}}},
      {"eval",
       {{"methods", c.methods},
        {"seeds", c.seeds},
        {"frames_per_second", c.frames_per_second},
        {"workers", c.workers}}},
      {"sweep",
       {{"parameter", c.sweep.parameter},
        {"values", std::move(sweep_values)},
        {"method", c.sweep.method}}},
  };
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Per-seed world

struct TestSet {
  std::string domain;
  Corpus corpus;
};

inline CorpusSpec train_spec(const RunConfig& c) {
  CorpusSpec s = c.corpus;
  s.num_utterances = c.train_utterances;
  return s;
}

inline Corpus make_train_corpus(const RunConfig& c, std::uint64_t seed) {
  return synth_corpus(train_spec(c), mix_seed(seed, 1));
}

inline std::vector<std::vector<std::string>> make_lm_text(const RunConfig& c, std::uint64_t seed) {
  return sample_sentences(c.corpus, c.lm.sentences, mix_seed(seed, 2));
}

/// Clean test utterances are shared by every domain; each domain applies its
/// own corruption chain and the length filter.
inline std::vector<TestSet> make_test_sets(const RunConfig& c, std::uint64_t seed) {
  CorpusSpec s = c.corpus;
  s.num_utterances = c.test_utterances;
  const Corpus clean = synth_corpus(s, mix_seed(seed, 3));
  std::vector<TestSet> out;
  for (std::size_t d = 0; d < c.domains.size(); ++d) {
    const auto& dom = c.domains[d];
    Corpus shifted = corrupt_corpus(clean, dom.corruptions, mix_seed(seed, 100 + d));
    out.push_back({dom.name, filter_by_length(shifted, c.max_frames)});
  }
  return out;
}

inline AcousticModel make_acoustic_model(const RunConfig& c, const Corpus& train,
                                         std::uint64_t seed) {
  TrainConfig t = c.acoustic;
  t.seed = mix_seed(seed, 4);
  return train_source(train, c.corpus.alphabet(), t);
}

inline NGramModel make_lm(const RunConfig& c, std::uint64_t seed) {
  return train_lm(make_lm_text(c, seed), c.lm.order, c.lm.discount);
}

}  // namespace sutalm
