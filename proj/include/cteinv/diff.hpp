#pragma once

// Token-level diff between a source sentence and its reconstruction.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "cteinv/reconstruction.hpp"

namespace cteinv {

enum class TokenStatus { exact, mismatch };

/// One column of the alignment. Either side may be absent (insertion or
/// deletion), in which case the status is always mismatch.
struct AlignedToken {
  std::optional<std::string> source;
  std::optional<std::string> reconstructed;
  TokenStatus status = TokenStatus::exact;
};

struct DiffAnnotation {
  std::vector<std::string> source_tokens;
  std::vector<std::string> reconstructed_tokens;
  std::vector<AlignedToken> alignment;
  std::size_t mismatches = 0;

  bool exact() const { return mismatches == 0; }
  std::string verdict() const { return exact() ? "exact reconstruction" : "differs"; }
};

/// Minimal edit distance (unit costs) between two token sequences.
inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Positional comparison for equal lengths; otherwise an alignment by a
/// minimal edit script where substitutions, insertions and deletions are
/// mismatches.
inline DiffAnnotation render_diff(const std::vector<std::string>& source, const std::vector<std::string>& reconstructed) {
  DiffAnnotation d{source, reconstructed, {}, 0};
  const auto n = source.size(), m = reconstructed.size();
  if (n == m) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool same = source[i] == reconstructed[i];
      d.alignment.push_back({source[i], reconstructed[i], same ? TokenStatus::exact : TokenStatus::mismatch});
      d.mismatches += same ? 0 : 1;
    }
    return d;
  }
  std::vector<std::vector<std::size_t>> dp(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) dp[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) dp[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + (source[i - 1] == reconstructed[j - 1] ? 0 : 1)});
    }
  }
  std::size_t i = n, j = m;
  std::vector<AlignedToken> rev;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + (source[i - 1] == reconstructed[j - 1] ? 0 : 1)) {
      const bool same = source[i - 1] == reconstructed[j - 1];
      rev.push_back({source[i - 1], reconstructed[j - 1], same ? TokenStatus::exact : TokenStatus::mismatch});
      --i;
      --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      rev.push_back({source[i - 1], std::nullopt, TokenStatus::mismatch});
      --i;
    } else {
      rev.push_back({std::nullopt, reconstructed[j - 1], TokenStatus::mismatch});
      --j;
    }
  }
  d.alignment.assign(rev.rbegin(), rev.rend());
  for (const auto& a : d.alignment) d.mismatches += a.status == TokenStatus::mismatch ? 1 : 0;
  return d;
}

/// Reconstructed text with mismatches marked: [[tok]] in plain mode, red in
/// ANSI mode. Deletions show as [[-src]].
inline std::string format_diff(const DiffAnnotation& d, bool ansi) {
  std::string out;
  for (const auto& a : d.alignment) {
    if (!out.empty()) out.push_back(' ');
    if (a.status == TokenStatus::exact) {
      out += *a.reconstructed;
      continue;
    }
    const std::string body = a.reconstructed ? *a.reconstructed : "-" + *a.source;
    out += ansi ? "\x1b[31m" + body + "\x1b[0m" : "[[" + body + "]]";
  }
  return out;
}

}  // namespace cteinv
