#pragma once

// Corpus-level BLEU-4 over token ids, single reference per hypothesis.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "qbt/core.hpp"

namespace qbt {

struct BleuReport {
  double bleu = 0.0;  // [0, 100]
  std::array<double, 4> precisions{};  // modified n-gram precisions, n = 1..4
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_tokens = 0;
  std::size_t ref_tokens = 0;
};

// Replaces a zero higher-order precision so a corpus with some unigram overlap
// still gets a (tiny) positive score. No unigram overlap scores exactly 0.
inline constexpr double kBleuZeroSmoothing = 1e-9;

namespace detail {

inline std::map<Sequence, int> ngram_counts(const Sequence& s, int n) {
  std::map<Sequence, int> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Sequence(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<Sequence>& hyps, const std::vector<Sequence>& refs) {
  if (hyps.size() != refs.size()) throw InvalidInput("corpus_bleu: hypothesis and reference counts differ");
  if (hyps.empty()) throw InvalidInput("corpus_bleu: empty corpus");
  BleuReport r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    r.hyp_tokens += hyps[i].size();
    r.ref_tokens += refs[i].size();
    for (int n = 1; n <= 4; ++n) {
      const auto h = detail::ngram_counts(hyps[i], n);
      const auto ref = detail::ngram_counts(refs[i], n);
      for (const auto& [gram, count] : h) {
        const auto it = ref.find(gram);
        if (it != ref.end()) r.matches[n - 1] += std::min(count, it->second);
      }
      if (hyps[i].size() >= static_cast<std::size_t>(n)) r.totals[n - 1] += hyps[i].size() - n + 1;
    }
  }
  for (int n = 0; n < 4; ++n)
    r.precisions[n] = r.totals[n] ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;

  if (r.hyp_tokens == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_tokens >= r.ref_tokens) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_tokens) / static_cast<double>(r.hyp_tokens));
  }
  if (r.matches[0] == 0) {
    r.bleu = 0.0;
    return r;
  }
  // An order with no hypothesis n-grams at all (every sentence shorter than n)
  // has nothing wrong in it and counts as precision 1; brevity is left to BP.
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double p = r.totals[n] == 0 ? 1.0 : r.precisions[n];
    log_sum += std::log(p > 0.0 ? p : kBleuZeroSmoothing);
  }
  r.bleu = 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  r.bleu = std::clamp(r.bleu, 0.0, 100.0);
  return r;
}

// BLEU with one model's outputs as the reference corpus for another's.
inline BleuReport self_bleu(const std::vector<Sequence>& reference_outputs, const std::vector<Sequence>& hypothesis_outputs) {
  if (reference_outputs.size() != hypothesis_outputs.size())
    throw InvalidInput("self_bleu: corpora were not generated from the same sources");
  return corpus_bleu(hypothesis_outputs, reference_outputs);
}

// Fraction of hypothesis tokens equal to the source token at the same position.
inline double copy_rate(const std::vector<Sequence>& hyps, const std::vector<Sequence>& sources) {
  if (hyps.size() != sources.size()) throw InvalidInput("copy_rate: corpus sizes differ");
  std::size_t copied = 0, total = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    total += hyps[i].size();
    const std::size_t n = std::min(hyps[i].size(), sources[i].size());
    for (std::size_t j = 0; j < n; ++j) copied += hyps[i][j] == sources[i][j];
  }
  return total ? static_cast<double>(copied) / static_cast<double>(total) : 0.0;
}

}  // namespace qbt
