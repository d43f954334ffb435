#pragma once

// Uncased word-piece tokenizer compatible with BERT-style vocab.txt files.
// This is the encoder-side tok()/tok^-1 lookup table; in the gray-box
// scenario it is handed to the attacker.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cteinv/errors.hpp"
#include "cteinv/hashing.hpp"
#include "cteinv/text.hpp"

namespace cteinv {

using TokenId = std::int32_t;

struct TokenAlignment {
  std::vector<std::string> tokens;
  std::vector<TokenId> vocab_ids;

  std::size_t size() const { return vocab_ids.size(); }
  friend bool operator==(const TokenAlignment&, const TokenAlignment&) = default;
};

class WordPieceTokenizer {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kCls = "[CLS]";
  static constexpr std::string_view kSep = "[SEP]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::size_t kMaxCharsPerWord = 100;

  WordPieceTokenizer() = default;

  explicit WordPieceTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      if (!index_.emplace(vocab_[i], static_cast<TokenId>(i)).second) {
        throw FormatError("duplicate vocabulary entry '" + vocab_[i] + "'");
      }
    }
    for (auto name : {kPad, kUnk, kCls, kSep}) {
      if (!index_.contains(std::string(name))) {
        throw FormatError("vocabulary lacks special token " + std::string(name));
      }
    }
    for (auto name : {kPad, kUnk, kCls, kSep, kMask}) {
      if (auto it = index_.find(std::string(name)); it != index_.end()) specials_.push_back(it->first);
    }
    // Longest first so "[MASK]" never loses to a shorter prefix match.
    std::sort(specials_.begin(), specials_.end(),
              [](const auto& a, const auto& b) { return a.size() > b.size(); });
  }

  static WordPieceTokenizer load(const std::filesystem::path& vocab_txt) {
    std::ifstream in(vocab_txt, std::ios::binary);
    if (!in) throw IoError("cannot read vocabulary " + vocab_txt.string());
    std::vector<std::string> v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      v.push_back(line);
    }
    return WordPieceTokenizer(std::move(v));
  }

  void save(const std::filesystem::path& vocab_txt) const {
    std::ofstream out(vocab_txt, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary " + vocab_txt.string());
    for (const auto& t : vocab_) out << t << '\n';
  }

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  TokenId id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk_id() : it->second;
  }
  const std::string& token_of(TokenId id) const { return vocab_.at(static_cast<std::size_t>(id)); }

  TokenId pad_id() const { return index_.at(std::string(kPad)); }
  TokenId unk_id() const { return index_.at(std::string(kUnk)); }
  TokenId cls_id() const { return index_.at(std::string(kCls)); }
  TokenId sep_id() const { return index_.at(std::string(kSep)); }
  bool is_special(TokenId id) const {
    const auto& t = token_of(id);
    return std::find(specials_.begin(), specials_.end(), t) != specials_.end();
  }

  /// Content tokens only; sequence markers are added by the encoder.
  TokenAlignment tokenize(std::string_view text) const {
    TokenAlignment out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t next = std::string_view::npos;
      std::string_view found;
      for (const auto& sp : specials_) {
        const auto at = text.find(sp, pos);
        if (at < next) {
          next = at;
          found = sp;
        }
      }
      tokenize_plain(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos), out);
      if (next == std::string_view::npos) break;
      out.tokens.emplace_back(found);
      out.vocab_ids.push_back(index_.at(std::string(found)));
      pos = next + found.size();
    }
    return out;
  }

  /// Joins pieces with spaces and glues "##" continuations onto the
  /// preceding piece.
  std::string detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto id = ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
        throw IdOutOfRange(i, id, vocab_.size());
      }
      const auto& tok = vocab_[static_cast<std::size_t>(id)];
      if (tok.size() > 2 && tok.starts_with("##") && !out.empty()) {
        out.append(tok, 2);
      } else {
        if (!out.empty()) out.push_back(' ');
        out += tok;
      }
    }
    return out;
  }

  Digest digest() const {
    Sha256 h;
    for (const auto& t : vocab_) h.update(t).update("\n");
    return h.finish();
  }

 private:
  void tokenize_plain(std::string_view text, TokenAlignment& out) const {
    if (text.empty()) return;
    for (const auto& word : text::basic_split(text::lower_strip_accents(text))) {
      word_pieces(word, out);
    }
  }

  // Greedy longest-match-first segmentation of one word.
  void word_pieces(const std::string& word, TokenAlignment& out) const {
    const auto cps = text::code_points(word);
    if (cps.size() > kMaxCharsPerWord) {
      out.tokens.emplace_back(kUnk);
      out.vocab_ids.push_back(unk_id());
      return;
    }
    // Byte offsets of code point boundaries.
    std::vector<std::size_t> offs{0};
    {
      std::string tmp;
      for (auto c : cps) {
        text::append_utf8(tmp, c);
        offs.push_back(tmp.size());
      }
    }
    std::vector<std::pair<std::string, TokenId>> pieces;
    std::size_t start = 0;
    while (start < cps.size()) {
      std::size_t end = cps.size();
      bool matched = false;
      while (end > start) {
        std::string sub = word.substr(offs[start], offs[end] - offs[start]);
        if (start > 0) sub = "##" + sub;
        if (auto it = index_.find(sub); it != index_.end()) {
          pieces.emplace_back(std::move(sub), it->second);
          matched = true;
          break;
        }
        --end;
      }
      if (!matched) {
        out.tokens.emplace_back(kUnk);
        out.vocab_ids.push_back(unk_id());
        return;
      }
      start = end;
    }
    for (auto& [tok, id] : pieces) {
      out.tokens.push_back(std::move(tok));
      out.vocab_ids.push_back(id);
    }
  }

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> specials_;
};

/// Builds a compact uncased vocabulary from raw text: specials, every
/// observed character (bare and "##"-prefixed), then whole words by
/// descending frequency until target_size entries exist.
inline WordPieceTokenizer build_wordpiece_vocab(const std::vector<std::string>& texts, std::size_t target_size) {
  std::vector<std::string> vocab{std::string(WordPieceTokenizer::kPad), std::string(WordPieceTokenizer::kUnk),
                                 std::string(WordPieceTokenizer::kCls), std::string(WordPieceTokenizer::kSep),
                                 std::string(WordPieceTokenizer::kMask)};
  std::map<char32_t, std::size_t> chars;
  std::unordered_map<std::string, std::size_t> words;
  for (const auto& t : texts) {
    for (const auto& w : text::basic_split(text::lower_strip_accents(t))) {
      ++words[w];
      for (auto c : text::code_points(w)) ++chars[c];
    }
  }
  for (const auto& [c, n] : chars) {
    std::string s;
    text::append_utf8(s, c);
    vocab.push_back(s);
  }
  for (const auto& [c, n] : chars) {
    std::string s = "##";
    text::append_utf8(s, c);
    vocab.push_back(s);
  }
  if (vocab.size() > target_size) {
    throw InvalidArgument("vocabulary target " + std::to_string(target_size) + " is smaller than the " +
                          std::to_string(vocab.size()) + " required character entries");
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : words) {
    if (text::code_points(w).size() > 1) ranked.emplace_back(w, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [w, n] : ranked) {
    if (vocab.size() >= target_size) break;
    vocab.push_back(w);
  }
  return WordPieceTokenizer(std::move(vocab));
}

}  // namespace cteinv
