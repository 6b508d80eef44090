// sutalm/decode.hpp

// CTC greedy decoding and prefix beam search with n-gram shallow fusion:
//
//   score(y) = log p_am(y|x) + alpha * log p_lm(y) + beta * words(y)
//
// The LM is applied each time a word is closed by a space; the trailing
// partial word and the sentence-end marker are scored once at the end.

#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "sutalm/common.hpp"
#include "sutalm/corpus.hpp"
#include "sutalm/lm.hpp"

namespace sutalm {

using Transcript = std::vector<std::string>;

struct FusionConfig {
  double alpha = 0.5;
  double beta = 0.0;
  int beam_width = 50;  // implementation choice; not a published value
  int n_best = 1;
  std::optional<double> logit_floor;  // drop classes with log-prob below this per frame
  bool score_sentence_end = true;
};

/// Argmax path collapsed to a character string (ties go to the lowest class).
inline std::string greedy_text(const LogitMatrix& z, const Alphabet& alphabet) {
  std::vector<int> path(z.frames());
  for (std::size_t l = 0; l < z.frames(); ++l) path[l] = static_cast<int>(argmax(z.row(l)));
  return alphabet.collapse(path);
}

inline Transcript greedy_decode(const LogitMatrix& z, const Alphabet& alphabet) {
  if (!z.all_finite()) throw InvalidArgument("greedy_decode: non-finite logits");
  return split_words(greedy_text(z, alphabet));
}

struct ScoredTranscript {
  std::string text;      // collapsed label string
  Transcript words;
  double score = 0.0;     // fused
  double acoustic = 0.0;  // log prefix mass
  double lm = 0.0;        // log p_lm of the words (unweighted)
};

inline nlohmann::json to_json(const ScoredTranscript& s) {
  return {{"text", s.text}, {"score", s.score}, {"acoustic", s.acoustic}, {"lm", s.lm}};
}

namespace detail {

/// Label-prefix trie shared by all hypotheses of one decode. Each node caches
/// the LM context for the words it has completed.
class PrefixTrie {
 public:
  struct Node {
    int parent = -1;
    int label = -1;
    LmState lm_state;
    double lm_logprob = 0.0;  // completed words only
    int words = 0;
    std::string partial;
    std::vector<std::pair<int, int>> children;  // (label, node)
  };

  PrefixTrie(const Alphabet& alphabet, const NGramModel* lm) : alphabet_(alphabet), lm_(lm) {
    Node root;
    if (lm_) root.lm_state = lm_->begin_state();
    nodes_.push_back(std::move(root));
  }

  const Node& operator[](int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  int child(int id, int label) {
    for (const auto& [l, c] : nodes_[static_cast<std::size_t>(id)].children)
      if (l == label) return c;
    Node n;
    const Node& p = nodes_[static_cast<std::size_t>(id)];
    n.parent = id;
    n.label = label;
    n.lm_state = p.lm_state;
    n.lm_logprob = p.lm_logprob;
    n.words = p.words;
    if (label == Alphabet::kSpace) {
      if (!p.partial.empty()) {
        if (lm_) n.lm_logprob += lm_->advance(n.lm_state, lm_->vocabulary().id(p.partial));
        ++n.words;
      }
    } else {
      n.partial = p.partial;
      n.partial.push_back(alphabet_.symbol(label));
    }
    const int nid = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    nodes_[static_cast<std::size_t>(id)].children.emplace_back(label, nid);
    return nid;
  }

  std::vector<int> labels(int id) const {
    std::vector<int> out;
    for (; id > 0; id = nodes_[static_cast<std::size_t>(id)].parent)
      out.push_back(nodes_[static_cast<std::size_t>(id)].label);
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::string text(int id) const {
    std::string s;
    for (int l : labels(id)) s.push_back(alphabet_.symbol(l));
    return s;
  }

  /// Strict lexicographic order on label sequences.
  bool lex_less(int a, int b) const {
    if (a == b) return false;
    const auto la = labels(a), lb = labels(b);
    return std::lexicographical_compare(la.begin(), la.end(), lb.begin(), lb.end());
  }

 private:
  const Alphabet& alphabet_;
  const NGramModel* lm_;
  std::vector<Node> nodes_;
};

struct Beam {
  int node;
  double blank;     // log mass of alignments ending in blank
  double nonblank;  // log mass of alignments ending in the last label
  double fused = 0.0;
};

/// log P(labels | z) summed over every CTC alignment (forward recursion).
inline double ctc_log_prob(const LogitMatrix& z, const std::vector<int>& labels) {
  const std::size_t S = 2 * labels.size() + 1;
  auto label_at = [&](std::size_t s) { return s % 2 ? labels[s / 2] : Alphabet::kBlank; };
  std::vector<double> alpha(S, kNegInf), prev(S), lp(z.classes());
  for (std::size_t t = 0; t < z.frames(); ++t) {
    log_softmax(z.row(t), lp);
    if (t == 0) {
      alpha[0] = lp[Alphabet::kBlank];
      if (S > 1) alpha[1] = lp[static_cast<std::size_t>(labels[0])];
      continue;
    }
    prev = alpha;
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (s >= 2 && s % 2 && label_at(s) != label_at(s - 2)) a = log_add(a, prev[s - 2]);
      alpha[s] = a + lp[static_cast<std::size_t>(label_at(s))];
    }
  }
  if (z.frames() == 0) return labels.empty() ? 0.0 : kNegInf;
  return S > 1 ? log_add(alpha[S - 1], alpha[S - 2]) : alpha[0];
}

}  // namespace detail

/// CTC prefix beam search with shallow fusion. `lm` may be null when
/// alpha and beta are both zero.
inline std::vector<ScoredTranscript> beam_search(const LogitMatrix& z, const Alphabet& alphabet,
                                                 const NGramModel* lm, const FusionConfig& cfg) {
  using detail::Beam;
  if (cfg.beam_width < 1) throw InvalidArgument("beam_search: beam_width must be >= 1");
  if (cfg.n_best < 1) throw InvalidArgument("beam_search: n_best must be >= 1");
  if (!z.all_finite()) throw InvalidArgument("beam_search: non-finite logits");
  if (z.classes() != static_cast<std::size_t>(alphabet.size()))
    throw DimensionError("beam_search: logit width does not match alphabet");
  if (!lm && cfg.alpha != 0.0) throw InvalidArgument("beam_search: alpha > 0 requires an LM");

  detail::PrefixTrie trie(alphabet, lm);
  const auto classes = static_cast<int>(z.classes());
  const auto width = static_cast<std::size_t>(cfg.beam_width);

  // The greedy labelling is always a final candidate, scored with its exact
  // alignment mass, so pruning can never rank below greedy decoding.
  std::vector<int> greedy_labels;
  int greedy_node = 0;
  for (std::size_t t = 0, prev = Alphabet::kBlank; t < z.frames(); ++t) {
    const std::size_t c = argmax(z.row(t));
    if (c != Alphabet::kBlank && c != prev) {
      greedy_labels.push_back(static_cast<int>(c));
      greedy_node = trie.child(greedy_node, static_cast<int>(c));
    }
    prev = c;
  }

  auto prefix_score = [&](const Beam& b) {
    const auto& n = trie[b.node];
    return log_add(b.blank, b.nonblank) + cfg.alpha * n.lm_logprob + cfg.beta * n.words;
  };
  auto better = [&](const Beam& a, const Beam& b) {
    if (a.fused != b.fused) return a.fused > b.fused;
    return trie.lex_less(a.node, b.node);
  };

  std::vector<Beam> beams{{0, 0.0, kNegInf, 0.0}};
  std::vector<Beam> next;
  std::vector<int> slot;  // node -> index into `next`, -1 if absent
  std::vector<double> lp(static_cast<std::size_t>(classes));

  auto entry = [&](int node) -> Beam& {
    if (slot.size() < trie.size()) slot.resize(trie.size(), -1);
    int& s = slot[static_cast<std::size_t>(node)];
    if (s < 0) {
      s = static_cast<int>(next.size());
      next.push_back({node, kNegInf, kNegInf, 0.0});
    }
    return next[static_cast<std::size_t>(s)];
  };

  for (std::size_t t = 0; t < z.frames(); ++t) {
    log_softmax(z.row(t), lp);
    next.clear();
    for (const Beam& b : beams) {
      const double total = log_add(b.blank, b.nonblank);
      const int last = trie[b.node].label;
      {
        Beam& e = entry(b.node);
        e.blank = log_add(e.blank, total + lp[Alphabet::kBlank]);
      }
      for (int c = 0; c < classes; ++c) {
        if (c == Alphabet::kBlank) continue;
        const double p = lp[static_cast<std::size_t>(c)];
        if (cfg.logit_floor && p < *cfg.logit_floor) continue;
        const int child = trie.child(b.node, c);
        if (c == last) {
          Beam& ext = entry(child);
          ext.nonblank = log_add(ext.nonblank, b.blank + p);
          Beam& same = entry(b.node);
          same.nonblank = log_add(same.nonblank, b.nonblank + p);
        } else {
          Beam& ext = entry(child);
          ext.nonblank = log_add(ext.nonblank, total + p);
        }
      }
    }
    for (const Beam& b : next) slot[static_cast<std::size_t>(b.node)] = -1;
    std::erase_if(next, [](const Beam& b) { return log_add(b.blank, b.nonblank) == kNegInf; });
    for (Beam& b : next) b.fused = prefix_score(b);
    if (next.size() > width) {
      std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(width), next.end(),
                        better);
      next.resize(width);
    } else {
      std::sort(next.begin(), next.end(), better);
    }
    std::swap(beams, next);
  }

  // Finalise: score the trailing partial word and the sentence end.
  const double greedy_mass = detail::ctc_log_prob(z, greedy_labels);
  if (std::none_of(beams.begin(), beams.end(), [&](const Beam& b) { return b.node == greedy_node; }))
    beams.push_back({greedy_node, greedy_mass, kNegInf, 0.0});
  std::vector<std::pair<Beam, ScoredTranscript>> finals;
  for (Beam& b : beams) {
    if (b.node == greedy_node) b = {greedy_node, greedy_mass, kNegInf, 0.0};
    const auto& n = trie[b.node];
    ScoredTranscript s;
    s.text = trie.text(b.node);
    s.words = split_words(s.text);
    s.acoustic = log_add(b.blank, b.nonblank);
    double lm_total = n.lm_logprob;
    int words = n.words;
    LmState state = n.lm_state;
    if (!n.partial.empty()) {
      if (lm) lm_total += lm->advance(state, lm->vocabulary().id(n.partial));
      ++words;
    }
    if (lm && cfg.score_sentence_end) lm_total += lm->end_score(state);
    s.lm = lm ? lm_total : 0.0;
    s.score = s.acoustic + cfg.alpha * s.lm + cfg.beta * words;
    Beam keyed = b;
    keyed.fused = s.score;
    finals.emplace_back(keyed, std::move(s));
  }
  std::sort(finals.begin(), finals.end(),
            [&](const auto& a, const auto& b) { return better(a.first, b.first); });
  std::vector<ScoredTranscript> out;
  for (std::size_t i = 0; i < finals.size() && i < static_cast<std::size_t>(cfg.n_best); ++i)
    out.push_back(std::move(finals[i].second));
  return out;
}

/// Top-1 words of a beam search (empty if the beam produced nothing).
inline Transcript beam_decode(const LogitMatrix& z, const Alphabet& alphabet, const NGramModel* lm,
                              const FusionConfig& cfg) {
  FusionConfig one = cfg;
  one.n_best = 1;
  auto best = beam_search(z, alphabet, lm, one);
  return best.empty() ? Transcript{} : best.front().words;
}

}  // namespace sutalm
