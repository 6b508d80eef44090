// sutalm/wer.hpp

// Word error rate via Levenshtein distance over word tokens.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "sutalm/common.hpp"

namespace sutalm {

struct WerResult {
  int edits = 0;
  double rate = 0.0;
};

/// Unit-cost substitution/insertion/deletion distance.
template <typename T>
int edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<int> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const int sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

inline WerResult wer(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  if (reference.empty()) throw InvalidArgument("wer: empty reference");
  const int e = edit_distance(reference, hypothesis);
  return {e, static_cast<double>(e) / static_cast<double>(reference.size())};
}

}  // namespace sutalm
