// sutalm/lm.hpp

// Word-level backoff n-gram model with absolute discounting.
//
// All probabilities are kept as natural logs. Reading and writing the ARPA
// format converts to and from log10.
//
// Estimation, for a history h with observed continuations:
//   p(w|h) = (c(h,w) - D) / c(h.)                     if c(h,w) > 0
//          = bow(h) * p(w|h')                         otherwise
// where h' drops the oldest word and bow(h) renormalises the freed mass
// D * N1+(h.) / c(h.). Unigrams interpolate with a uniform distribution over
// every predictable token (including </s> and <unk>), so unknown words keep a
// trained floor probability.

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sutalm/common.hpp"

namespace sutalm {

using WordId = std::int32_t;

inline constexpr int kMaxLmOrder = 4;

class Vocabulary {
 public:
  static constexpr WordId kBos = 0;
  static constexpr WordId kEos = 1;
  static constexpr WordId kUnk = 2;

  Vocabulary() {
    add("<s>");
    add("</s>");
    add("<unk>");
  }

  WordId add(const std::string& word) {
    auto [it, inserted] = index_.try_emplace(word, static_cast<WordId>(words_.size()));
    if (inserted) words_.push_back(word);
    return it->second;
  }

  /// Id of a word, or <unk> if it was never seen.
  WordId id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }
  const std::string& word(WordId id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> index_;
};

/// Scoring context: the most recent (order - 1) words, oldest first.
struct LmState {
  std::array<WordId, kMaxLmOrder - 1> history{};
  std::uint8_t size = 0;

  std::span<const WordId> words() const { return {history.data(), size}; }

  friend bool operator==(const LmState& a, const LmState& b) {
    return a.size == b.size &&
           std::equal(a.history.begin(), a.history.begin() + a.size, b.history.begin());
  }
};

class NGramModel {
 public:
  struct Entry {
    double log_prob = 0.0;
    double backoff = 0.0;  // natural log; 0 when the n-gram is never a history
  };

  NGramModel() = default;
  explicit NGramModel(int order) : order_(order), tables_(static_cast<std::size_t>(order)) {
    if (order < 1 || order > kMaxLmOrder)
      throw InvalidArgument("n-gram order must be in [1, " + std::to_string(kMaxLmOrder) + "]");
  }

  int order() const { return order_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  Vocabulary& vocabulary() { return vocab_; }

  /// Packs up to kMaxLmOrder word ids into one key (16 bits each).
  static std::uint64_t key(std::span<const WordId> ngram) {
    std::uint64_t k = 0;
    for (WordId w : ngram) k = (k << 16) | static_cast<std::uint64_t>(w + 1);
    return k;
  }

  const Entry* find(std::span<const WordId> ngram) const {
    if (ngram.empty() || ngram.size() > tables_.size()) return nullptr;
    const auto& table = tables_[ngram.size() - 1];
    auto it = table.find(key(ngram));
    return it == table.end() ? nullptr : &it->second;
  }

  void set(std::span<const WordId> ngram, Entry e) { tables_.at(ngram.size() - 1)[key(ngram)] = e; }

  /// ln p(w | history), backing off through shorter histories.
  double log_prob(std::span<const WordId> history, WordId w) const {
    if (history.size() >= static_cast<std::size_t>(order_))
      history = history.subspan(history.size() - static_cast<std::size_t>(order_ - 1));
    double bow = 0.0;
    std::array<WordId, kMaxLmOrder> buf{};
    while (true) {
      std::copy(history.begin(), history.end(), buf.begin());
      buf[history.size()] = w;
      if (const Entry* e = find({buf.data(), history.size() + 1})) return bow + e->log_prob;
      if (history.empty()) break;
      if (const Entry* h = find(history)) bow += h->backoff;
      history = history.subspan(1);
    }
    // Only reachable for ids that have no unigram entry.
    const Entry* unk = find(std::array<WordId, 1>{Vocabulary::kUnk});
    return bow + (unk ? unk->log_prob : kNegInf);
  }

  LmState begin_state() const {
    LmState s;
    if (order_ > 1) {
      s.history[0] = Vocabulary::kBos;
      s.size = 1;
    }
    return s;
  }

  /// Advances the state by one word; returns ln p(w | state).
  double advance(LmState& state, WordId w) const {
    const double lp = log_prob(state.words(), w);
    const std::size_t keep = static_cast<std::size_t>(order_ - 1);
    if (keep == 0) return lp;
    if (state.size < keep) {
      state.history[state.size++] = w;
    } else {
      std::rotate(state.history.begin(), state.history.begin() + 1,
                  state.history.begin() + state.size);
      state.history[state.size - 1] = w;
    }
    return lp;
  }

  double end_score(const LmState& state) const { return log_prob(state.words(), Vocabulary::kEos); }

  const std::vector<std::unordered_map<std::uint64_t, Entry>>& tables() const { return tables_; }

 private:
  int order_ = 1;
  Vocabulary vocab_;
  std::vector<std::unordered_map<std::uint64_t, Entry>> tables_;
};

/// Advances by a word string; unknown words map to <unk>.
inline std::pair<LmState, double> score_incremental(const NGramModel& lm, LmState state,
                                                    std::string_view word) {
  const double lp = lm.advance(state, lm.vocabulary().id(word));
  return {state, lp};
}

/// ln p(<s> y </s>); the end marker term can be dropped.
inline double score_sequence(const NGramModel& lm, std::span<const std::string> words,
                             bool include_end = true) {
  LmState s = lm.begin_state();
  double total = 0.0;
  for (const auto& w : words) total += lm.advance(s, lm.vocabulary().id(w));
  if (include_end) total += lm.end_score(s);
  return total;
}

// ---------------------------------------------------------------------------
// Training

inline NGramModel train_lm(const std::vector<std::vector<std::string>>& text, int order,
                           double discount) {
  if (order < 1 || order > kMaxLmOrder)
    throw InvalidArgument("train_lm: order must be in [1, " + std::to_string(kMaxLmOrder) + "]");
  if (!(discount > 0.0 && discount < 1.0)) throw InvalidArgument("train_lm: discount must be in (0,1)");
  std::size_t tokens = 0;
  for (const auto& s : text) tokens += s.size();
  if (tokens == 0) throw InvalidArgument("train_lm: empty training text");

  NGramModel lm(order);
  Vocabulary& vocab = lm.vocabulary();

  // counts[n-1] maps an n-gram to its count; std::map keeps iteration sorted
  // so that floating-point accumulation order is deterministic.
  std::vector<std::map<std::vector<WordId>, double>> counts(static_cast<std::size_t>(order));
  for (const auto& sentence : text) {
    std::vector<WordId> padded{Vocabulary::kBos};
    for (const auto& w : sentence) padded.push_back(vocab.add(w));
    padded.push_back(Vocabulary::kEos);
    for (std::size_t i = 1; i < padded.size(); ++i) {
      for (int n = 1; n <= order; ++n) {
        if (static_cast<std::size_t>(n) > i + 1) break;
        std::vector<WordId> g(padded.begin() + static_cast<std::ptrdiff_t>(i + 1 - n),
                              padded.begin() + static_cast<std::ptrdiff_t>(i + 1));
        counts[static_cast<std::size_t>(n - 1)][g] += 1.0;
      }
    }
  }
  if (vocab.size() >= 0xfffe) throw InvalidArgument("train_lm: vocabulary too large");

  // Unigrams: discounted counts interpolated with a uniform floor over all
  // predictable tokens (everything except <s>).
  {
    const auto& uni = counts[0];
    double total = 0.0;
    for (const auto& [g, c] : uni) total += c;
    const double freed = discount * static_cast<double>(uni.size()) / total;
    const double uniform = freed / static_cast<double>(vocab.size() - 1);
    for (WordId w = 0; w < static_cast<WordId>(vocab.size()); ++w) {
      const std::vector<WordId> g{w};
      if (w == Vocabulary::kBos) {
        lm.set(g, {-99.0 * std::log(10.0), 0.0});
        continue;
      }
      auto it = uni.find(g);
      const double c = it == uni.end() ? 0.0 : it->second;
      const double p = std::max(c - discount, 0.0) / total + uniform;
      lm.set(g, {std::log(p), 0.0});
    }
  }

  // Higher orders: discounted observed n-grams plus a backoff weight stored on
  // the history n-gram.
  for (int n = 2; n <= order; ++n) {
    std::map<std::vector<WordId>, std::vector<std::pair<WordId, double>>> by_history;
    for (const auto& [g, c] : counts[static_cast<std::size_t>(n - 1)]) {
      std::vector<WordId> h(g.begin(), g.end() - 1);
      by_history[h].push_back({g.back(), c});
    }
    for (const auto& [h, conts] : by_history) {
      double total = 0.0;
      for (const auto& [w, c] : conts) total += c;
      const std::span<const WordId> shorter(h.data() + 1, h.size() - 1);
      double kept_lower = 0.0;
      for (const auto& [w, c] : conts) {
        std::vector<WordId> g = h;
        g.push_back(w);
        lm.set(g, {std::log((c - discount) / total), 0.0});
        kept_lower += std::exp(lm.log_prob(shorter, w));
      }
      const double freed = discount * static_cast<double>(conts.size()) / total;
      const NGramModel::Entry* he = lm.find(h);
      NGramModel::Entry updated = he ? *he : NGramModel::Entry{};
      updated.backoff = std::log(freed / (1.0 - kept_lower));
      lm.set(h, updated);
    }
  }
  return lm;
}

// ---------------------------------------------------------------------------
// ARPA format

inline void write_arpa(std::ostream& os, const NGramModel& lm) {
  const double to_log10 = 1.0 / std::log(10.0);
  const auto& vocab = lm.vocabulary();
  // Sorted copies so output is byte-stable.
  std::vector<std::vector<std::pair<std::vector<WordId>, NGramModel::Entry>>> sections(
      static_cast<std::size_t>(lm.order()));
  for (int n = 1; n <= lm.order(); ++n) {
    auto& sec = sections[static_cast<std::size_t>(n - 1)];
    for (const auto& [k, e] : lm.tables()[static_cast<std::size_t>(n - 1)]) {
      std::vector<WordId> g(static_cast<std::size_t>(n));
      std::uint64_t key = k;
      for (int i = n - 1; i >= 0; --i) {
        g[static_cast<std::size_t>(i)] = static_cast<WordId>(key & 0xffff) - 1;
        key >>= 16;
      }
      sec.emplace_back(std::move(g), e);
    }
    std::sort(sec.begin(), sec.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  os << "\n\\data\\\n";
  for (int n = 1; n <= lm.order(); ++n)
    os << "ngram " << n << "=" << sections[static_cast<std::size_t>(n - 1)].size() << "\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int n = 1; n <= lm.order(); ++n) {
    os << "\n\\" << n << "-grams:\n";
    for (const auto& [g, e] : sections[static_cast<std::size_t>(n - 1)]) {
      os << e.log_prob * to_log10 << '\t';
      for (std::size_t i = 0; i < g.size(); ++i) os << (i ? " " : "") << vocab.word(g[i]);
      if (n < lm.order() && e.backoff != 0.0) os << '\t' << e.backoff * to_log10;
      os << '\n';
    }
  }
  os << "\n\\end\\\n";
}

inline NGramModel read_arpa(std::istream& is) {
  const double ln10 = std::log(10.0);
  std::string line;
  std::vector<std::size_t> declared;
  while (std::getline(is, line) && line != "\\data\\") {
  }
  if (!is) throw ConfigError("ARPA: missing \\data\\ header");
  while (std::getline(is, line) && !line.empty()) {
    if (line.rfind("ngram ", 0) != 0) throw ConfigError("ARPA: bad header line '" + line + "'");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("ARPA: bad header line '" + line + "'");
    declared.push_back(std::stoul(line.substr(eq + 1)));
  }
  if (declared.empty()) throw ConfigError("ARPA: no n-gram counts declared");
  NGramModel lm(static_cast<int>(declared.size()));

  struct Pending {
    std::vector<std::string> words;
    NGramModel::Entry entry;
  };
  std::vector<std::vector<Pending>> sections(declared.size());
  int current = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line == "\\end\\") break;
    if (line.front() == '\\') {
      current = std::stoi(line.substr(1));
      if (current < 1 || current > static_cast<int>(declared.size()))
        throw ConfigError("ARPA: unexpected section '" + line + "'");
      continue;
    }
    if (current == 0) throw ConfigError("ARPA: n-gram outside a section");
    std::istringstream fields(line);
    Pending p;
    double lp10 = 0.0;
    if (!(fields >> lp10)) throw ConfigError("ARPA: bad n-gram line '" + line + "'");
    p.words.resize(static_cast<std::size_t>(current));
    for (auto& w : p.words)
      if (!(fields >> w)) throw ConfigError("ARPA: truncated n-gram line '" + line + "'");
    double bow10 = 0.0;
    fields >> bow10;
    p.entry = {lp10 * ln10, bow10 * ln10};
    sections[static_cast<std::size_t>(current - 1)].push_back(std::move(p));
  }
  for (std::size_t n = 0; n < declared.size(); ++n) {
    if (sections[n].size() != declared[n])
      throw ConfigError("ARPA: section " + std::to_string(n + 1) + " count mismatch");
  }
  Vocabulary& vocab = lm.vocabulary();
  for (const auto& p : sections[0]) vocab.add(p.words[0]);
  for (const auto& sec : sections) {
    for (const auto& p : sec) {
      std::vector<WordId> g;
      for (const auto& w : p.words) {
        if (!vocab.contains(w)) throw ConfigError("ARPA: word '" + w + "' missing from unigrams");
        g.push_back(vocab.id(w));
      }
      lm.set(g, p.entry);
    }
  }
  if (!lm.find(std::array<WordId, 1>{Vocabulary::kUnk}))
    throw ConfigError("ARPA: model has no <unk> unigram");
  return lm;
}

inline NGramModel load_arpa(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ARPA file '" + path + "'");
  return read_arpa(in);
}

}  // namespace sutalm
