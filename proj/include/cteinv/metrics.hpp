#pragma once

// Corpus-level reconstruction metrics: clipped n-gram precision, BLEU-4
// (single reference, no smoothing) and exact sentence accuracy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cteinv/errors.hpp"

namespace cteinv::metrics {

struct NgramCounts {
  std::uint64_t matched = 0;  // clipped
  std::uint64_t total = 0;    // hypothesis n-grams

  double precision() const { return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total); }
};

template <typename Tok>
using Corpus = std::vector<std::vector<Tok>>;

namespace detail {

template <typename Tok>
void check_sizes(const Corpus<Tok>& hyps, const Corpus<Tok>& refs) {
  if (hyps.size() != refs.size()) {
    throw InvalidArgument("hypothesis/reference count mismatch: " + std::to_string(hyps.size()) + " vs " +
                          std::to_string(refs.size()));
  }
  if (hyps.empty()) throw InvalidArgument("metrics need at least one sentence pair");
}

template <typename Tok>
std::map<std::vector<Tok>, std::uint64_t> ngrams(const std::vector<Tok>& s, std::size_t n) {
  std::map<std::vector<Tok>, std::uint64_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[std::vector<Tok>(s.begin() + i, s.begin() + i + n)];
  return out;
}

}  // namespace detail

/// Clipped n-gram counts for one sentence pair.
template <typename Tok>
NgramCounts sentence_ngram_counts(const std::vector<Tok>& hyp, const std::vector<Tok>& ref, std::size_t n) {
  NgramCounts c;
  if (hyp.size() < n) return c;
  const auto h = detail::ngrams(hyp, n);
  const auto r = detail::ngrams(ref, n);
  for (const auto& [g, k] : h) {
    c.total += k;
    if (auto it = r.find(g); it != r.end()) c.matched += std::min(k, it->second);
  }
  return c;
}

template <typename Tok>
NgramCounts corpus_ngram_counts(const Corpus<Tok>& hyps, const Corpus<Tok>& refs, std::size_t n) {
  detail::check_sizes(hyps, refs);
  NgramCounts c;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto s = sentence_ngram_counts(hyps[i], refs[i], n);
    c.matched += s.matched;
    c.total += s.total;
  }
  return c;
}

struct PrecisionResult {
  double value = 0;
  bool undefined = false;  // no hypothesis n-grams at all; value forced to 0
};

/// Corpus-level modified n-gram precision.
template <typename Tok>
PrecisionResult ngram_precision(const Corpus<Tok>& hyps, const Corpus<Tok>& refs, std::size_t n) {
  if (n < 1) throw InvalidArgument("n-gram order must be positive");
  const auto c = corpus_ngram_counts(hyps, refs, n);
  return {c.precision(), c.total == 0};
}

struct BleuResult {
  double bleu = 0;
  double brevity_penalty = 0;
  double precisions[4] = {0, 0, 0, 0};
  std::uint64_t hyp_length = 0;
  std::uint64_t ref_length = 0;
  bool zero_precision = false;  // some order had no match; BLEU is 0 without smoothing
};

/// Corpus BLEU-4: geometric mean of clipped 1..4-gram precisions times
/// exp(1 - r/c) when c <= r.
template <typename Tok>
BleuResult bleu(const Corpus<Tok>& hyps, const Corpus<Tok>& refs) {
  detail::check_sizes(hyps, refs);
  BleuResult r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    r.hyp_length += hyps[i].size();
    r.ref_length += refs[i].size();
  }
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto c = corpus_ngram_counts(hyps, refs, n);
    r.precisions[n - 1] = c.precision();
    if (c.matched == 0) {
      r.zero_precision = true;
    } else {
      log_sum += std::log(c.precision());
    }
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0;
  } else if (r.hyp_length > r.ref_length) {
    r.brevity_penalty = 1;
  } else {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  }
  r.bleu = r.zero_precision ? 0.0 : r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

template <typename Tok>
double sentence_accuracy(const Corpus<Tok>& hyps, const Corpus<Tok>& refs) {
  detail::check_sizes(hyps, refs);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) exact += hyps[i] == refs[i] ? 1 : 0;
  return static_cast<double>(exact) / static_cast<double>(hyps.size());
}

struct MetricSet {
  double bleu = 0;
  double p3 = 0;
  double p4 = 0;
  double sent_acc = 0;
  std::size_t n_sentences = 0;
  std::vector<std::string> flags;

  /// bleu >= p3 >= p4 >= sent_acc
  bool ordered() const { return bleu >= p3 && p3 >= p4 && p4 >= sent_acc; }
};

template <typename Tok>
MetricSet compute_metrics(const Corpus<Tok>& hyps, const Corpus<Tok>& refs) {
  MetricSet m;
  const auto b = bleu(hyps, refs);
  const auto p3 = ngram_precision(hyps, refs, 3);
  const auto p4 = ngram_precision(hyps, refs, 4);
  m.bleu = b.bleu;
  m.p3 = p3.value;
  m.p4 = p4.value;
  m.sent_acc = sentence_accuracy(hyps, refs);
  m.n_sentences = hyps.size();
  if (b.zero_precision) m.flags.emplace_back("bleu_zero_precision");
  if (p3.undefined) m.flags.emplace_back("p3_no_hypothesis_ngrams");
  if (p4.undefined) m.flags.emplace_back("p4_no_hypothesis_ngrams");
  std::size_t short_refs = 0;
  for (const auto& r : refs) short_refs += r.size() < 4 ? 1 : 0;
  if (short_refs > 0) m.flags.push_back("short_references:" + std::to_string(short_refs));
  return m;
}

/// Metrics over the pairs whose hypothesis and reference both have at least
/// `min_len` tokens; the subset on which the ordering invariant is checked.
template <typename Tok>
std::optional<MetricSet> compute_metrics_min_length(const Corpus<Tok>& hyps, const Corpus<Tok>& refs,
                                                    std::size_t min_len = 4) {
  detail::check_sizes(hyps, refs);
  Corpus<Tok> h, r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (hyps[i].size() >= min_len && refs[i].size() >= min_len) {
      h.push_back(hyps[i]);
      r.push_back(refs[i]);
    }
  }
  if (h.empty()) return std::nullopt;
  return compute_metrics(h, r);
}

}  // namespace cteinv::metrics
