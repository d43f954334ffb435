#pragma once

// Attacker capability model (white/gray/black box) and the exhaustive
// search-space arithmetic.
//
// Closed-form inversion of the encoder is deliberately absent: a stack of
// attention layers with layer normalization and GELU has no tractable
// symbolic inverse, so only learned approximations are provided.

#include <cstdint>
#include <optional>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "cteinv/errors.hpp"

namespace cteinv {

enum class Scenario { white_box, gray_box, black_box };

inline Scenario parse_scenario(const std::string& tag) {
  if (tag == "wb" || tag == "WB") return Scenario::white_box;
  if (tag == "gb" || tag == "GB") return Scenario::gray_box;
  if (tag == "bb" || tag == "BB") return Scenario::black_box;
  throw InvalidArgument("unknown scenario '" + tag + "' (expected wb, gb or bb)");
}

inline std::string scenario_tag(Scenario s) {
  switch (s) {
    case Scenario::white_box: return "wb";
    case Scenario::gray_box: return "gb";
    case Scenario::black_box: return "bb";
  }
  return "?";
}

struct ScenarioCapability {
  Scenario scenario = Scenario::black_box;
  bool has_tokenizer = false;
  bool has_detokenizer = false;
  bool has_encoder_params = false;
  bool can_query_encoder = false;
  std::optional<std::uint64_t> query_budget;  // nullopt = unlimited

  /// A black-box attacker who cannot query the encoder at all is outside the
  /// modelled scenarios.
  bool covered() const {
    if (scenario != Scenario::black_box) return true;
    return can_query_encoder && (!query_budget || *query_budget > 0);
  }
};

inline ScenarioCapability capability_for(Scenario s, std::optional<std::uint64_t> query_budget = std::nullopt) {
  ScenarioCapability c;
  c.scenario = s;
  c.query_budget = query_budget;
  switch (s) {
    case Scenario::white_box:
      c.has_tokenizer = c.has_detokenizer = c.has_encoder_params = c.can_query_encoder = true;
      break;
    case Scenario::gray_box:
      // The tokenizer is a lookup table and can be queried in both directions.
      c.has_tokenizer = c.has_detokenizer = true;
      c.can_query_encoder = true;
      break;
    case Scenario::black_box:
      c.can_query_encoder = !query_budget || *query_budget > 0;
      break;
  }
  return c;
}

inline ScenarioCapability capability_for(const std::string& tag,
                                         std::optional<std::uint64_t> query_budget = std::nullopt) {
  return capability_for(parse_scenario(tag), query_budget);
}

enum class AttackKind { classify, seq2seq };

inline std::string attack_name(AttackKind k) { return k == AttackKind::classify ? "classify" : "seq2seq"; }

inline AttackKind parse_attack(const std::string& s) {
  if (s == "classify") return AttackKind::classify;
  if (s == "seq2seq") return AttackKind::seq2seq;
  throw InvalidArgument("unknown attack '" + s + "' (expected classify or seq2seq)");
}

/// Fails fast when a scenario lacks what an attack consumes: the classifier
/// needs the encoder tokenizer in both directions; the decoder attack only
/// needs to obtain CTEs for its own text.
inline void require_capabilities(AttackKind attack, const ScenarioCapability& cap) {
  if (!cap.covered()) {
    throw CapabilityError("scenario " + scenario_tag(cap.scenario) +
                          " without encoder queries is not a covered attack setting");
  }
  if (attack == AttackKind::classify && !(cap.has_tokenizer && cap.has_detokenizer)) {
    throw CapabilityError("classify attack requires the encoder tokenizer (gray-box or white-box)");
  }
  if (attack == AttackKind::seq2seq && !cap.can_query_encoder) {
    throw CapabilityError("seq2seq attack requires text-to-CTE queries to build training pairs");
  }
}

using BigInt = boost::multiprecision::cpp_int;

/// Number of distinct token sequences of length seq_len: vocab_size^seq_len.
inline BigInt search_space_size(std::uint64_t seq_len, std::uint64_t vocab_size) {
  if (seq_len < 1 || vocab_size < 1) throw InvalidArgument("search_space_size needs positive arguments");
  return boost::multiprecision::pow(BigInt(vocab_size), static_cast<unsigned>(seq_len));
}

/// "d.ddd...e+NN" rendering with `digits` significant digits, truncated.
inline std::string scientific(const BigInt& n, unsigned digits = 3) {
  const std::string s = n.str();
  std::string out(1, s[0]);
  if (s.size() > 1 && digits > 1) {
    out += '.';
    out += s.substr(1, std::min<std::size_t>(digits - 1, s.size() - 1));
  }
  out += "e+" + std::to_string(s.size() - 1);
  return out;
}

}  // namespace cteinv
