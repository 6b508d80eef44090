// sutalm/corpus.hpp

// Synthetic corpora with known frame alignments, SNR-controlled corruption
// and JSON-lines persistence.
//
// Class layout of every alphabet: index 0 is the CTC blank, index 1 is the
// word-separating space, indices 2.. are the letters in declaration order.

#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sutalm/common.hpp"

namespace sutalm {

class Alphabet {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kSpace = 1;

  Alphabet() = default;
  explicit Alphabet(std::string letters) : letters_(std::move(letters)) {
    std::set<char> seen;
    for (char ch : letters_) {
      if (ch == ' ' || ch == '_' || !seen.insert(ch).second)
        throw InvalidArgument("alphabet letters must be unique and exclude ' ' and '_'");
    }
  }

  int size() const { return static_cast<int>(letters_.size()) + 2; }
  const std::string& letters() const { return letters_; }

  /// Class index of a transcript character, or -1 if it is not in the alphabet.
  int index_of(char ch) const {
    if (ch == ' ') return kSpace;
    auto pos = letters_.find(ch);
    return pos == std::string::npos ? -1 : static_cast<int>(pos) + 2;
  }

  /// Printable symbol of a class; blank prints as '_'.
  char symbol(int cls) const {
    if (cls == kBlank) return '_';
    if (cls == kSpace) return ' ';
    return letters_.at(static_cast<std::size_t>(cls - 2));
  }

  /// CTC collapse: merge repeats, then drop blanks.
  std::string collapse(std::span<const int> path) const {
    std::string out;
    int prev = -1;
    for (int cls : path) {
      if (cls != prev && cls != kBlank) out.push_back(symbol(cls));
      prev = cls;
    }
    return out;
  }

  friend bool operator==(const Alphabet&, const Alphabet&) = default;

 private:
  std::string letters_;
};

struct Utterance {
  std::string id;
  Matrix features;                     // frames x feature dims
  std::vector<std::string> reference;  // word tokens
  std::vector<int> alignment;          // per-frame gold class; empty if unknown

  std::size_t frames() const { return features.rows(); }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

using Corpus = std::vector<Utterance>;

struct IntRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct CorpusSpec {
  std::vector<std::string> vocabulary;
  std::string letters;
  IntRange sentence_length{3, 6};
  IntRange frames_per_token{2, 4};
  IntRange blank_frames{0, 2};  // blanks inserted before each character and at the end
  int feature_dim = 32;
  double embedding_scale = 0.75;  // std-dev of each class-embedding entry
  std::uint64_t embedding_seed = 7;
  int grammar_branching = 3;  // successors per word in the sentence grammar
  std::uint64_t grammar_seed = 11;
  int num_utterances = 0;

  Alphabet alphabet() const { return Alphabet(letters); }

  void validate() const {
    if (vocabulary.empty()) throw InvalidArgument("corpus vocabulary is empty");
    if (frames_per_token.lo < 1 || frames_per_token.hi < frames_per_token.lo)
      throw InvalidArgument("frames_per_token range must satisfy 1 <= lo <= hi");
    if (sentence_length.lo < 1 || sentence_length.hi < sentence_length.lo)
      throw InvalidArgument("sentence_length range must satisfy 1 <= lo <= hi");
    if (blank_frames.lo < 0 || blank_frames.hi < blank_frames.lo)
      throw InvalidArgument("blank_frames range must satisfy 0 <= lo <= hi");
    if (feature_dim < 1) throw InvalidArgument("feature_dim must be positive");
    if (grammar_branching < 1) throw InvalidArgument("grammar_branching must be positive");
    if (num_utterances < 0) throw InvalidArgument("num_utterances must be non-negative");
    const Alphabet a = alphabet();
    for (const auto& w : vocabulary) {
      if (w.empty()) throw InvalidArgument("empty vocabulary word");
      for (char ch : w)
        if (ch == ' ' || a.index_of(ch) < 0)
          throw InvalidArgument("word '" + w + "' uses characters outside the alphabet");
    }
  }
};

/// Fixed random embedding per class (classes x feature_dim).
inline Matrix class_embeddings(const CorpusSpec& spec) {
  const auto classes = static_cast<std::size_t>(spec.alphabet().size());
  Matrix emb(classes, static_cast<std::size_t>(spec.feature_dim));
  std::mt19937_64 rng(spec.embedding_seed);
  std::normal_distribution<double> normal(0.0, spec.embedding_scale);
  for (double& v : emb.data()) v = normal(rng);
  return emb;
}

/// First-order word grammar: each word may be followed by a fixed random
/// subset of the vocabulary.
class Grammar {
 public:
  explicit Grammar(const CorpusSpec& spec) : vocabulary_(spec.vocabulary) {
    const auto n = vocabulary_.size();
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(spec.grammar_branching), n);
    std::mt19937_64 rng(spec.grammar_seed);
    successors_.resize(n);
    std::vector<std::size_t> order(n);
    for (std::size_t w = 0; w < n; ++w) {
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      successors_[w].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }

  std::vector<std::string> sample(std::mt19937_64& rng, int length) const {
    std::vector<std::string> words;
    std::uniform_int_distribution<std::size_t> first(0, vocabulary_.size() - 1);
    std::size_t w = first(rng);
    for (int i = 0; i < length; ++i) {
      words.push_back(vocabulary_[w]);
      const auto& next = successors_[w];
      std::uniform_int_distribution<std::size_t> pick(0, next.size() - 1);
      w = next[pick(rng)];
    }
    return words;
  }

 private:
  std::vector<std::string> vocabulary_;
  std::vector<std::vector<std::size_t>> successors_;
};

/// Text-only sentences from the corpus grammar (language-model training data).
inline std::vector<std::vector<std::string>> sample_sentences(const CorpusSpec& spec, int count,
                                                              std::uint64_t seed) {
  spec.validate();
  Grammar grammar(spec);
  std::mt19937_64 rng(mix_seed(seed, 0x7e47));
  std::uniform_int_distribution<int> len(spec.sentence_length.lo, spec.sentence_length.hi);
  std::vector<std::vector<std::string>> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(grammar.sample(rng, len(rng)));
  return out;
}

/// Renders a word sequence as aligned feature frames: every character spans
/// k frames of its class embedding plus unit Gaussian noise, separated by
/// a random number of blank frames (at least one between equal characters).
inline Utterance render_utterance(const CorpusSpec& spec, const Matrix& embeddings,
                                  std::vector<std::string> words, std::mt19937_64& rng,
                                  std::string id) {
  const Alphabet alphabet = spec.alphabet();
  const std::string text = join_words(words);
  std::uniform_int_distribution<int> span(spec.frames_per_token.lo, spec.frames_per_token.hi);
  std::uniform_int_distribution<int> blanks(spec.blank_frames.lo, spec.blank_frames.hi);

  std::vector<int> path;
  int prev = -1;
  for (char ch : text) {
    const int cls = alphabet.index_of(ch);
    int nb = blanks(rng);
    if (cls == prev) nb = std::max(nb, 1);
    path.insert(path.end(), static_cast<std::size_t>(nb), Alphabet::kBlank);
    path.insert(path.end(), static_cast<std::size_t>(span(rng)), cls);
    prev = cls;
  }
  path.insert(path.end(), static_cast<std::size_t>(blanks(rng)), Alphabet::kBlank);
  if (path.empty()) path.push_back(Alphabet::kBlank);

  const auto dim = static_cast<std::size_t>(spec.feature_dim);
  Matrix features(path.size(), dim);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t l = 0; l < path.size(); ++l) {
    const auto mu = embeddings.row(static_cast<std::size_t>(path[l]));
    for (std::size_t j = 0; j < dim; ++j) features(l, j) = mu[j] + noise(rng);
  }
  return Utterance{std::move(id), std::move(features), std::move(words), std::move(path)};
}

inline Corpus synth_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Matrix embeddings = class_embeddings(spec);
  Grammar grammar(spec);
  std::mt19937_64 rng(mix_seed(seed, 0xc0));
  std::uniform_int_distribution<int> len(spec.sentence_length.lo, spec.sentence_length.hi);
  Corpus corpus;
  corpus.reserve(static_cast<std::size_t>(spec.num_utterances));
  for (int i = 0; i < spec.num_utterances; ++i) {
    auto words = grammar.sample(rng, len(rng));
    corpus.push_back(render_utterance(spec, embeddings, std::move(words), rng,
                                      "utt" + std::to_string(i)));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Corruption

enum class CorruptionKind { gaussian, feature_scale, channel_shift };

inline std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian: return "gaussian";
    case CorruptionKind::feature_scale: return "feature_scale";
    case CorruptionKind::channel_shift: return "channel_shift";
  }
  return "?";
}

inline CorruptionKind parse_corruption_kind(const std::string& s) {
  if (s == "gaussian") return CorruptionKind::gaussian;
  if (s == "feature_scale") return CorruptionKind::feature_scale;
  if (s == "channel_shift") return CorruptionKind::channel_shift;
  throw InvalidArgument("unknown corruption kind '" + s + "'");
}

struct Corruption {
  CorruptionKind kind = CorruptionKind::gaussian;
  double snr_db = kInf;      // gaussian: target SNR in dB; +inf is the identity
  double magnitude = 0.0;    // feature_scale: std-dev of log-gain; channel_shift: std-dev of offset
  double dc_fraction = 0.0;  // gaussian: share of noise power in a per-utterance constant offset
  std::uint64_t seed = 0;

  friend bool operator==(const Corruption&, const Corruption&) = default;
};

/// Mean squared value over all feature entries.
inline double signal_power(const Matrix& m) {
  if (m.empty()) return 0.0;
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return s / static_cast<double>(m.data().size());
}

inline Utterance corrupt(const Utterance& u, const Corruption& c) {
  if (!u.features.all_finite()) throw InvalidArgument("corrupt: non-finite features");
  Utterance out = u;
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& x = out.features;
  switch (c.kind) {
    case CorruptionKind::gaussian: {
      if (std::isnan(c.snr_db) || c.snr_db == kNegInf)
        throw InvalidArgument("corrupt: snr_db must be finite or +inf");
      if (!(c.dc_fraction >= 0.0 && c.dc_fraction <= 1.0))
        throw InvalidArgument("corrupt: dc_fraction must be in [0, 1]");
      if (c.snr_db == kInf) break;
      const double ps = signal_power(x);
      if (ps == 0.0) break;
      // Noise = constant offset (dc_fraction of the power) + white part,
      // rescaled so the measured power hits the target exactly.
      std::vector<double> offset(x.cols());
      double offset_power = 0.0;
      for (double& o : offset) {
        o = normal(rng);
        offset_power += o * o;
      }
      offset_power /= static_cast<double>(offset.size());
      const double dc = offset_power > 0.0 ? std::sqrt(c.dc_fraction / offset_power) : 0.0;
      const double white = std::sqrt(1.0 - c.dc_fraction);
      std::vector<double> noise(x.data().size());
      double pn = 0.0;
      for (std::size_t i = 0; i < noise.size(); ++i) {
        noise[i] = dc * offset[i % x.cols()] + white * normal(rng);
        pn += noise[i] * noise[i];
      }
      pn /= static_cast<double>(noise.size());
      if (pn == 0.0) break;
      const double target = ps / std::pow(10.0, c.snr_db / 10.0);
      const double scale = std::sqrt(target / pn);
      for (std::size_t i = 0; i < noise.size(); ++i) x.data()[i] += scale * noise[i];
      break;
    }
    case CorruptionKind::feature_scale: {
      if (!std::isfinite(c.magnitude)) throw InvalidArgument("corrupt: non-finite scale");
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double gain = std::exp(c.magnitude * normal(rng));
        for (std::size_t l = 0; l < x.rows(); ++l) x(l, j) *= gain;
      }
      break;
    }
    case CorruptionKind::channel_shift: {
      if (!std::isfinite(c.magnitude)) throw InvalidArgument("corrupt: non-finite shift");
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double offset = c.magnitude * normal(rng);
        for (std::size_t l = 0; l < x.rows(); ++l) x(l, j) += offset;
      }
      break;
    }
  }
  return out;
}

/// Applies a chain of corruptions to every utterance. Each utterance gets its
/// own noise realisation derived from (seed, utterance index, chain position).
inline Corpus corrupt_corpus(const Corpus& corpus, std::span<const Corruption> chain,
                             std::uint64_t seed) {
  Corpus out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Utterance u = corpus[i];
    for (std::size_t k = 0; k < chain.size(); ++k) {
      Corruption c = chain[k];
      c.seed = mix_seed(mix_seed(seed ^ chain[k].seed, i), k);
      u = corrupt(u, c);
    }
    out.push_back(std::move(u));
  }
  return out;
}

inline Corpus filter_by_length(const Corpus& corpus, int max_frames) {
  if (max_frames < 1) throw InvalidArgument("filter_by_length: max_frames must be >= 1");
  Corpus out;
  for (const auto& u : corpus)
    if (u.frames() <= static_cast<std::size_t>(max_frames)) out.push_back(u);
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence

inline nlohmann::json to_json(const Utterance& u) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t l = 0; l < u.features.rows(); ++l) {
    auto r = u.features.row(l);
    features.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"id", u.id},
          {"features", std::move(features)},
          {"reference", u.reference},
          {"alignment", u.alignment}};
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  Utterance u;
  try {
    u.id = j.at("id").get<std::string>();
    const auto& rows = j.at("features");
    if (!rows.is_array() || rows.empty()) throw InvalidArgument("utterance '" + u.id + "' has no frames");
    const std::size_t dim = rows.at(0).size();
    u.features = Matrix(rows.size(), dim);
    for (std::size_t l = 0; l < rows.size(); ++l) {
      if (rows[l].size() != dim)
        throw DimensionError("utterance '" + u.id + "' has ragged feature rows");
      for (std::size_t k = 0; k < dim; ++k) u.features(l, k) = rows[l][k].get<double>();
    }
    u.reference = j.at("reference").get<std::vector<std::string>>();
    if (j.contains("alignment")) u.alignment = j.at("alignment").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed utterance record: ") + e.what());
  }
  if (!u.alignment.empty() && u.alignment.size() != u.frames())
    throw DimensionError("utterance '" + u.id + "' alignment length differs from frame count");
  return u;
}

inline void write_corpus(std::ostream& os, const Corpus& corpus) {
  for (const auto& u : corpus) os << to_json(u).dump() << '\n';
}

inline Corpus read_corpus(std::istream& is) {
  Corpus corpus;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("corpus line is not valid JSON: ") + e.what());
    }
    corpus.push_back(utterance_from_json(j));
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file '" + path + "'");
  return read_corpus(in);
}

}  // namespace sutalm
