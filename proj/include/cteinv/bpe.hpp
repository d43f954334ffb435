#pragma once

// Byte-level byte-pair-encoding tokenizer trained by the black-box attacker
// as a stand-in for the unavailable encoder tokenizer.
//
// Id layout: 0..3 specials (PAD, BOS, EOS, UNK), 4..259 the 256 raw bytes,
// 260.. merged symbols in merge-rank order. Every byte string is encodable,
// so UNK is never produced.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/corpus.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/hashing.hpp"

namespace cteinv {

namespace bpe_detail {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_word(unsigned char c) { return c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline int byte_class(unsigned char c) { return is_space(c) ? 0 : is_word(c) ? 1 : 2; }

/// GPT-2 style reversible byte -> printable code point table, used only to
/// keep the JSON form readable.
inline const std::array<char32_t, 256>& byte_to_char() {
  static const auto table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return t;
  }();
  return table;
}

inline std::string printable(std::string_view bytes) {
  std::string out;
  for (unsigned char c : bytes) text::append_utf8(out, byte_to_char()[c]);
  return out;
}

inline std::string from_printable(std::string_view s) {
  static const auto inverse = [] {
    std::unordered_map<char32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b) m[byte_to_char()[b]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  for (char32_t c : text::code_points(s)) {
    auto it = inverse.find(c);
    if (it == inverse.end()) throw FormatError("invalid character in serialized BPE token");
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

inline std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32 | static_cast<std::uint32_t>(b);
}

}  // namespace bpe_detail

/// Splits text into merge domains: an optional single leading space plus a
/// run of word bytes, or of punctuation bytes, or a whitespace run. The
/// concatenation of the chunks is the input.
inline std::vector<std::string_view> bpe_pretokenize(std::string_view s) {
  using namespace bpe_detail;
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const std::size_t start = i;
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == ' ' && i + 1 < n && !is_space(static_cast<unsigned char>(s[i + 1]))) {
      ++i;
      const int cls = byte_class(static_cast<unsigned char>(s[i]));
      while (i < n && byte_class(static_cast<unsigned char>(s[i])) == cls) ++i;
    } else if (is_space(c)) {
      while (i < n && is_space(static_cast<unsigned char>(s[i]))) ++i;
      // Leave a final ' ' to prefix the following word.
      if (i < n && i - start > 1 && s[i - 1] == ' ') --i;
    } else {
      const int cls = byte_class(c);
      while (i < n && byte_class(static_cast<unsigned char>(s[i])) == cls) ++i;
    }
    out.push_back(s.substr(start, i - start));
  }
  return out;
}

class BpeTokenizer {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kNumSpecials = 4;
  static constexpr std::int32_t kByteBase = 4;
  static constexpr std::int32_t kBaseVocab = kNumSpecials + 256;

  BpeTokenizer() { rebuild({}); }

  /// Deterministic training: each step merges the most frequent adjacent
  /// pair (ties: smallest left id, then smallest right id). Stops at
  /// vocab_size or when no pair remains.
  static BpeTokenizer train(const CorpusSplit& corpus, std::size_t vocab_size) {
    if (corpus.samples.empty()) throw EmptyCorpusError("train_bpe: empty corpus");
    if (vocab_size <= static_cast<std::size_t>(kBaseVocab)) {
      throw InvalidArgument("BPE vocabulary size must exceed " + std::to_string(kBaseVocab) +
                            " (specials + byte alphabet), got " + std::to_string(vocab_size));
    }
    std::map<std::string, std::uint64_t> chunk_counts;
    for (const auto& s : corpus.samples) {
      for (auto c : bpe_pretokenize(s.text)) ++chunk_counts[std::string(c)];
    }
    std::vector<std::vector<std::int32_t>> words;
    std::vector<std::uint64_t> freq;
    for (const auto& [chunk, n] : chunk_counts) {
      std::vector<std::int32_t> w;
      for (unsigned char b : chunk) w.push_back(kByteBase + b);
      words.push_back(std::move(w));
      freq.push_back(n);
    }

    std::vector<std::pair<std::int32_t, std::int32_t>> merges;
    std::vector<std::string> symbols;
    for (int b = 0; b < kBaseVocab; ++b) symbols.push_back(b < kByteBase ? std::string() : std::string(1, static_cast<char>(b - kByteBase)));
    std::unordered_set<std::string> known(symbols.begin() + kByteBase, symbols.end());
    const std::size_t target = vocab_size - kBaseVocab;
    std::unordered_map<std::uint64_t, std::uint64_t> counts;
    while (merges.size() < target) {
      counts.clear();
      for (std::size_t w = 0; w < words.size(); ++w) {
        const auto& syms = words[w];
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[bpe_detail::pair_key(syms[i], syms[i + 1])] += freq[w];
      }
      if (counts.empty()) break;
      // A pair whose concatenation already exists as a symbol is skipped so
      // the vocabulary stays bijective.
      std::uint64_t best_key = 0, best_n = 0;
      for (const auto& [k, n] : counts) {
        if (n > best_n || (n == best_n && k < best_key)) {
          const auto& l = symbols[static_cast<std::size_t>(k >> 32)];
          const auto& r = symbols[static_cast<std::size_t>(k & 0xFFFFFFFFu)];
          if (known.contains(l + r)) continue;
          best_n = n;
          best_key = k;
        }
      }
      if (best_n == 0) break;
      const auto left = static_cast<std::int32_t>(best_key >> 32);
      const auto right = static_cast<std::int32_t>(best_key & 0xFFFFFFFFu);
      const auto merged = static_cast<std::int32_t>(kBaseVocab + merges.size());
      merges.emplace_back(left, right);
      symbols.push_back(symbols[static_cast<std::size_t>(left)] + symbols[static_cast<std::size_t>(right)]);
      known.insert(symbols.back());
      for (auto& syms : words) {
        if (syms.size() < 2) continue;
        std::size_t o = 0;
        for (std::size_t i = 0; i < syms.size(); ++i) {
          if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
            syms[o++] = merged;
            ++i;
          } else {
            syms[o++] = syms[i];
          }
        }
        syms.resize(o);
      }
    }
    BpeTokenizer t;
    t.rebuild(std::move(merges));
    t.requested_vocab_size_ = vocab_size;
    return t;
  }

  std::size_t vocab_size() const { return tokens_.size(); }
  std::size_t requested_vocab_size() const { return requested_vocab_size_; }
  const std::vector<std::pair<std::int32_t, std::int32_t>>& merges() const { return merges_; }
  const std::string& token_bytes(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  static bool is_special(std::int32_t id) { return id >= 0 && id < kNumSpecials; }

  std::vector<std::int32_t> encode(std::string_view text) const {
    std::vector<std::int32_t> out;
    std::vector<std::int32_t> syms;
    for (auto chunk : bpe_pretokenize(text)) {
      syms.clear();
      for (unsigned char b : chunk) syms.push_back(kByteBase + b);
      while (syms.size() > 1) {
        std::int32_t best_rank = INT32_MAX;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
          auto it = rank_.find(bpe_detail::pair_key(syms[i], syms[i + 1]));
          if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == INT32_MAX) break;
        const auto [left, right] = merges_[static_cast<std::size_t>(best_rank)];
        const std::int32_t merged = kBaseVocab + best_rank;
        std::size_t o = 0;
        for (std::size_t i = 0; i < syms.size(); ++i) {
          if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
            syms[o++] = merged;
            ++i;
          } else {
            syms[o++] = syms[i];
          }
        }
        syms.resize(o);
      }
      out.insert(out.end(), syms.begin(), syms.end());
    }
    return out;
  }

  /// Concatenates token bytes; specials are dropped.
  std::string decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto id = ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw IdOutOfRange(i, id, tokens_.size());
      if (is_special(id)) continue;
      out += tokens_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json vocab = nlohmann::json::object();
    for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) vocab[bpe_detail::printable(tokens_[i])] = i;
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [l, r] : merges_) {
      merges.push_back({bpe_detail::printable(tokens_[static_cast<std::size_t>(l)]),
                        bpe_detail::printable(tokens_[static_cast<std::size_t>(r)])});
    }
    return {{"type", "byte-level-bpe"},
            {"version", 1},
            {"requested_vocab_size", requested_vocab_size_},
            {"specials", {{"[PAD]", kPad}, {"[BOS]", kBos}, {"[EOS]", kEos}, {"[UNK]", kUnk}}},
            {"vocab", vocab},
            {"merges", merges}};
  }

  static BpeTokenizer from_json(const nlohmann::json& j) {
    if (j.value("type", "") != "byte-level-bpe") throw FormatError("not a byte-level BPE tokenizer");
    std::unordered_map<std::string, std::int32_t> lookup;
    for (int b = 0; b < 256; ++b) lookup[std::string(1, static_cast<char>(b))] = kByteBase + b;
    std::vector<std::pair<std::int32_t, std::int32_t>> merges;
    for (const auto& m : j.at("merges")) {
      const auto l = bpe_detail::from_printable(m.at(0).get<std::string>());
      const auto r = bpe_detail::from_printable(m.at(1).get<std::string>());
      auto li = lookup.find(l), ri = lookup.find(r);
      if (li == lookup.end() || ri == lookup.end()) throw FormatError("merge references an unknown symbol");
      merges.emplace_back(li->second, ri->second);
      lookup.emplace(l + r, static_cast<std::int32_t>(kBaseVocab + merges.size() - 1));
    }
    BpeTokenizer t;
    t.rebuild(std::move(merges));
    t.requested_vocab_size_ = j.value("requested_vocab_size", t.vocab_size());
    for (const auto& [tok, id] : j.at("vocab").items()) {
      const auto bytes = bpe_detail::from_printable(tok);
      const auto i = id.get<std::size_t>();
      if (i >= t.tokens_.size() || t.tokens_[i] != bytes) throw FormatError("vocab entry disagrees with merges");
    }
    return t;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(1) << '\n';
  }

  static BpeTokenizer load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return from_json(nlohmann::json::parse(in));
  }

  Digest digest() const { return sha256(to_json().dump()); }

 private:
  void rebuild(std::vector<std::pair<std::int32_t, std::int32_t>> merges) {
    merges_ = std::move(merges);
    tokens_.assign(kBaseVocab + merges_.size(), {});
    tokens_[kPad] = "";
    for (int b = 0; b < 256; ++b) tokens_[static_cast<std::size_t>(kByteBase + b)] = std::string(1, static_cast<char>(b));
    rank_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto [l, rt] = merges_[r];
      tokens_[kBaseVocab + r] = tokens_[static_cast<std::size_t>(l)] + tokens_[static_cast<std::size_t>(rt)];
      rank_.emplace(bpe_detail::pair_key(l, rt), static_cast<std::int32_t>(r));
    }
  }

  std::vector<std::pair<std::int32_t, std::int32_t>> merges_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::uint64_t, std::int32_t> rank_;
  std::size_t requested_vocab_size_ = kBaseVocab;
};

}  // namespace cteinv
