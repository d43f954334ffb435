#pragma once

// Line-based corpus ingestion, train/eval splitting and fractional
// subsampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/errors.hpp"
#include "cteinv/hashing.hpp"
#include "cteinv/random.hpp"
#include "cteinv/text.hpp"

namespace cteinv {

struct TextSample {
  std::string doc_id;
  std::uint64_t line_no = 0;
  std::string text;

  friend bool operator==(const TextSample&, const TextSample&) = default;
};

/// The dataset-size ablation levels: 100%, 10%, 1%, 0.1%.
enum class Fraction { full, tenth, hundredth, thousandth };

inline constexpr Fraction kAllFractions[] = {Fraction::thousandth, Fraction::hundredth,
                                             Fraction::tenth, Fraction::full};

inline double fraction_value(Fraction f) {
  switch (f) {
    case Fraction::full: return 1.0;
    case Fraction::tenth: return 0.1;
    case Fraction::hundredth: return 0.01;
    case Fraction::thousandth: return 0.001;
  }
  return 1.0;
}

inline std::string fraction_label(Fraction f) {
  switch (f) {
    case Fraction::full: return "100%";
    case Fraction::tenth: return "10%";
    case Fraction::hundredth: return "1%";
    case Fraction::thousandth: return "0.1%";
  }
  return "?";
}

inline Fraction fraction_from_value(double v) {
  for (auto f : kAllFractions) {
    if (std::abs(v - fraction_value(f)) < 1e-12) return f;
  }
  throw InvalidArgument("fraction must be one of 1.0, 0.1, 0.01, 0.001 (got " + std::to_string(v) + ")");
}

/// Accepts "1", "1.0", "0.1", "0.01", "0.001" or the percent labels.
inline Fraction parse_fraction(const std::string& s) {
  if (s == "100%") return Fraction::full;
  if (s == "10%") return Fraction::tenth;
  if (s == "1%") return Fraction::hundredth;
  if (s == "0.1%") return Fraction::thousandth;
  double v = 0;
  try {
    std::size_t pos = 0;
    v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw InvalidArgument("unrecognized fraction '" + s + "'");
  }
  return fraction_from_value(v);
}

struct CorpusSplit {
  std::string name;
  std::vector<TextSample> samples;
  Fraction fraction = Fraction::full;
  std::uint64_t seed = 0;
  std::string source_checksum;  // hex SHA-256 of the source bytes
  std::string split_unit = "line";

  std::size_t sample_count() const { return samples.size(); }
};

enum class CorpusFormat { plain_lines, jsonl };

inline CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "plain-lines" || s == "plain" || s == "txt") return CorpusFormat::plain_lines;
  if (s == "jsonl") return CorpusFormat::jsonl;
  throw InvalidArgument("unknown corpus format '" + s + "'");
}

namespace detail {

inline std::vector<std::filesystem::path> corpus_files(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(path, ec)) throw IoError("corpus path does not exist: " + path.string());
  if (!fs::is_directory(path, ec)) return {path};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline void check_line(const std::string& line, const std::string& where) {
  if (!text::is_valid_utf8(line)) throw FormatError("invalid UTF-8 in " + where);
}

}  // namespace detail

/// Loads one file, or every regular file of a directory in name order.
/// Plain-lines files yield one sample per non-blank line with doc_id set to
/// the file stem. Text is NFC-normalized once here.
inline CorpusSplit load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  CorpusSplit out;
  out.name = path.stem().string();
  Sha256 checksum;
  std::set<std::pair<std::string, std::uint64_t>> seen;

  for (const auto& file : detail::corpus_files(path)) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    const std::string stem = file.stem().string();
    std::string line;
    std::uint64_t line_no = 0;
    for (; std::getline(in, line); ++line_no) {
      checksum.update(line).update("\n");
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string where = file.string() + ":" + std::to_string(line_no + 1);
      detail::check_line(line, where);
      TextSample s;
      if (format == CorpusFormat::plain_lines) {
        if (text::trim(line).empty()) continue;
        s = {stem, line_no, text::nfc(line)};
      } else {
        if (text::trim(line).empty()) continue;
        nlohmann::json rec;
        try {
          rec = nlohmann::json::parse(line);
          s.doc_id = rec.at("doc_id").get<std::string>();
          s.line_no = rec.at("line_no").get<std::uint64_t>();
          s.text = text::nfc(rec.at("text").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
          throw FormatError("bad jsonl record at " + where + ": " + e.what());
        }
        if (s.text.find('\n') != std::string::npos || s.text.find('\r') != std::string::npos) {
          throw FormatError("record text contains a newline at " + where);
        }
        if (text::trim(s.text).empty()) continue;
      }
      if (!seen.emplace(s.doc_id, s.line_no).second) {
        throw FormatError("duplicate (doc_id, line_no) = (" + s.doc_id + ", " +
                          std::to_string(s.line_no) + ") at " + where);
      }
      out.samples.push_back(std::move(s));
    }
    if (in.bad()) throw IoError("read error on " + file.string());
  }
  if (out.samples.empty()) throw EmptyCorpusError("no non-empty lines in " + path.string());
  const auto d = checksum.finish();
  out.source_checksum = to_hex(d);
  return out;
}

inline CorpusSplit load_corpus(const std::filesystem::path& path, const std::string& format) {
  return load_corpus(path, parse_corpus_format(format));
}

/// By-line random split. Both sides keep the input's relative order.
inline std::pair<CorpusSplit, CorpusSplit> split_train_eval(const CorpusSplit& corpus,
                                                            double eval_fraction,
                                                            std::uint64_t seed) {
  const std::size_t n = corpus.samples.size();
  if (n < 2) throw InvalidArgument("split_train_eval needs at least 2 samples");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw InvalidArgument("eval_fraction must lie in (0, 1)");
  }
  const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n)));
  if (n_eval == 0 || n_eval == n) {
    throw InvalidArgument("eval_fraction " + std::to_string(eval_fraction) + " leaves an empty side for " +
                          std::to_string(n) + " samples");
  }
  Rng rng(seed);
  auto perm = rng.permutation(n);
  std::vector<bool> is_eval(n, false);
  for (std::size_t i = 0; i < n_eval; ++i) is_eval[perm[i]] = true;

  CorpusSplit train, eval;
  for (auto* s : {&train, &eval}) {
    s->fraction = corpus.fraction;
    s->seed = seed;
    s->source_checksum = corpus.source_checksum;
    s->split_unit = corpus.split_unit;
  }
  train.name = corpus.name + "-train";
  eval.name = corpus.name + "-eval";
  train.samples.reserve(n - n_eval);
  eval.samples.reserve(n_eval);
  for (std::size_t i = 0; i < n; ++i) {
    (is_eval[i] ? eval : train).samples.push_back(corpus.samples[i]);
  }
  return {std::move(train), std::move(eval)};
}

/// Number of samples kept at a fraction: round-half-away of f*N, which is
/// always within [floor(f*N), ceil(f*N)].
inline std::size_t subsample_size(std::size_t n, Fraction fraction) {
  if (fraction == Fraction::full) return n;
  return static_cast<std::size_t>(std::llround(fraction_value(fraction) * static_cast<double>(n)));
}

/// Uniform subset without replacement, kept in source order. Each fraction
/// draws independently; smaller fractions are not nested in larger ones.
inline CorpusSplit subsample(const CorpusSplit& split, Fraction fraction, std::uint64_t seed) {
  CorpusSplit out = split;
  out.fraction = fraction;
  out.seed = seed;
  if (fraction == Fraction::full) return out;

  const std::size_t n = split.samples.size();
  const std::size_t k = subsample_size(n, fraction);
  if (k == 0) {
    throw EmptyCorpusError("subsample at " + fraction_label(fraction) + " of " + std::to_string(n) +
                           " samples is empty");
  }
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  out.samples.clear();
  out.samples.reserve(k);
  for (auto i : idx) out.samples.push_back(split.samples[i]);
  return out;
}

inline nlohmann::json corpus_manifest(const CorpusSplit& split) {
  return {{"name", split.name},
          {"fraction", fraction_value(split.fraction)},
          {"seed", split.seed},
          {"sample_count", split.sample_count()},
          {"source_checksum", split.source_checksum},
          {"split_unit", split.split_unit}};
}

inline void write_jsonl(const CorpusSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : split.samples) {
    out << nlohmann::json{{"doc_id", s.doc_id}, {"line_no", s.line_no}, {"text", s.text}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_manifest(const CorpusSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << corpus_manifest(split).dump(2) << '\n';
}

/// Reads a jsonl corpus and, when present, its ".manifest.json" sidecar.
inline CorpusSplit load_split(const std::filesystem::path& path) {
  auto split = load_corpus(path, CorpusFormat::jsonl);
  auto sidecar = path;
  sidecar += ".manifest.json";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    const auto m = nlohmann::json::parse(in);
    split.name = m.value("name", split.name);
    split.fraction = fraction_from_value(m.value("fraction", 1.0));
    split.seed = m.value("seed", std::uint64_t{0});
    split.source_checksum = m.value("source_checksum", split.source_checksum);
  }
  return split;
}

}  // namespace cteinv
