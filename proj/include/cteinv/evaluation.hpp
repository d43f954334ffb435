#pragma once

// Attack datasets (CTE rows paired with target ids) and evaluation of a
// trained attack on a held-out split.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/bpe.hpp"
#include "cteinv/checkpoint.hpp"
#include "cteinv/classify.hpp"
#include "cteinv/corpus.hpp"
#include "cteinv/encoder.hpp"
#include "cteinv/metrics.hpp"
#include "cteinv/seq2seq.hpp"
#include "cteinv/shard.hpp"
#include "cteinv/text.hpp"

namespace cteinv {

/// Owns the CTEs and target id sequences an attack trains or evaluates on.
struct AttackData {
  std::vector<CteSequence> ctes;
  std::vector<std::vector<std::int32_t>> targets;
  std::vector<std::string> texts;

  std::size_t size() const { return ctes.size(); }

  template <typename Example>
  std::vector<Example> examples() const {
    std::vector<Example> out(ctes.size());
    for (std::size_t i = 0; i < ctes.size(); ++i) out[i] = Example{&ctes[i], &targets[i]};
    return out;
  }
};

namespace detail {

inline void check_shard_matches(const Shard& shard, const CorpusSplit& split) {
  if (shard.records.size() != split.samples.size()) {
    throw InvalidArgument("shard holds " + std::to_string(shard.records.size()) + " records but split '" + split.name +
                          "' has " + std::to_string(split.samples.size()) + " samples");
  }
}

}  // namespace detail

/// Gray-box pairs: every CTE row labelled with the encoder vocabulary id it
/// was produced from. `indices` selects a subset of the split (all if empty).
inline AttackData build_classify_data(const Shard& shard, const CorpusSplit& split, const EncoderPipeline& pipeline,
                                      const std::vector<std::size_t>& indices = {}) {
  detail::check_shard_matches(shard, split);
  AttackData d;
  auto add = [&](std::size_t i) {
    auto ids = pipeline.tokenize_truncating(split.samples[i].text).first.vocab_ids;
    if (ids.size() != shard.records[i].length()) {
      throw InvalidArgument("sample " + std::to_string(i) + ": token count " + std::to_string(ids.size()) +
                            " differs from CTE length " + std::to_string(shard.records[i].length()));
    }
    d.ctes.push_back(shard.records[i]);
    d.targets.push_back(std::move(ids));
    d.texts.push_back(split.samples[i].text);
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < split.samples.size(); ++i) add(i);
  } else {
    for (auto i : indices) add(i);
  }
  return d;
}

/// Black-box pairs: CTE memory and the attacker's own BPE ids of the text.
inline AttackData build_seq2seq_data(const Shard& shard, const CorpusSplit& split, const BpeTokenizer& bpe,
                                     const std::vector<std::size_t>& indices = {}) {
  detail::check_shard_matches(shard, split);
  AttackData d;
  auto add = [&](std::size_t i) {
    d.ctes.push_back(shard.records[i]);
    d.targets.push_back(bpe.encode(split.samples[i].text));
    d.texts.push_back(split.samples[i].text);
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < split.samples.size(); ++i) add(i);
  } else {
    for (auto i : indices) add(i);
  }
  return d;
}

/// Positions of a subsample within its parent split, matched by
/// (doc_id, line_no).
inline std::vector<std::size_t> locate_samples(const CorpusSplit& parent, const CorpusSplit& subset) {
  std::map<std::pair<std::string, std::uint64_t>, std::size_t> where;
  for (std::size_t i = 0; i < parent.samples.size(); ++i) {
    where[{parent.samples[i].doc_id, parent.samples[i].line_no}] = i;
  }
  std::vector<std::size_t> out;
  out.reserve(subset.samples.size());
  for (const auto& s : subset.samples) {
    auto it = where.find({s.doc_id, s.line_no});
    if (it == where.end()) throw InvalidArgument("sample " + s.doc_id + ":" + std::to_string(s.line_no) + " not in parent");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EvalReport {
  std::string attack;
  std::string train_domain;
  std::string eval_domain;
  double fraction = 1.0;
  std::size_t train_lines = 0;
  std::string status = "ok";  // ok | failed
  std::string error;
  metrics::MetricSet metrics;
  /// Exact match of the normalized reconstructed text; comparable across attacks.
  double text_exact = 0;
  /// Metrics restricted to pairs with >= 4 tokens on both sides.
  std::optional<metrics::MetricSet> long_subset;
  std::size_t length_cap_hits = 0;
  std::string encoder_digest_before;
  std::string encoder_digest_after;

  bool ok() const { return status == "ok"; }
  bool in_domain() const { return train_domain == eval_domain; }
  bool ordering_holds() const { return !long_subset || long_subset->ordered(); }

  nlohmann::json to_json() const {
    auto ms = [](const metrics::MetricSet& m) {
      return nlohmann::json{{"bleu", m.bleu},     {"p3", m.p3},
                            {"p4", m.p4},         {"sent_acc", m.sent_acc},
                            {"n_sentences", m.n_sentences}, {"flags", m.flags}};
    };
    nlohmann::json j{{"attack", attack},
                     {"train_domain", train_domain},
                     {"eval_domain", eval_domain},
                     {"fraction", fraction},
                     {"train_lines", train_lines},
                     {"status", status}};
    if (!ok()) {
      j["error"] = error;
      return j;
    }
    j["metrics"] = ms(metrics);
    j["text_exact"] = text_exact;
    j["long_subset"] = long_subset ? ms(*long_subset) : nlohmann::json(nullptr);
    j["ordering_holds"] = ordering_holds();
    j["length_cap_hits"] = length_cap_hits;
    j["encoder_digest_before"] = encoder_digest_before;
    j["encoder_digest_after"] = encoder_digest_after;
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    auto ms = [](const nlohmann::json& o) {
      metrics::MetricSet m;
      m.bleu = o.at("bleu");
      m.p3 = o.at("p3");
      m.p4 = o.at("p4");
      m.sent_acc = o.at("sent_acc");
      m.n_sentences = o.at("n_sentences");
      m.flags = o.at("flags").get<std::vector<std::string>>();
      return m;
    };
    EvalReport r;
    r.attack = j.at("attack");
    r.train_domain = j.at("train_domain");
    r.eval_domain = j.at("eval_domain");
    r.fraction = j.at("fraction");
    r.train_lines = j.value("train_lines", std::size_t{0});
    r.status = j.at("status");
    if (!r.ok()) {
      r.error = j.value("error", "");
      return r;
    }
    r.metrics = ms(j.at("metrics"));
    r.text_exact = j.at("text_exact");
    if (!j.at("long_subset").is_null()) r.long_subset = ms(j.at("long_subset"));
    r.length_cap_hits = j.value("length_cap_hits", std::size_t{0});
    r.encoder_digest_before = j.value("encoder_digest_before", "");
    r.encoder_digest_after = j.value("encoder_digest_after", "");
    return r;
  }

  static EvalReport failed(std::string attack, std::string train_domain, std::string eval_domain, double fraction,
                           std::string error) {
    EvalReport r;
    r.attack = std::move(attack);
    r.train_domain = std::move(train_domain);
    r.eval_domain = std::move(eval_domain);
    r.fraction = fraction;
    r.status = "failed";
    r.error = std::move(error);
    return r;
  }
};

/// Reconstructions for a dataset, in order.
struct Reconstructions {
  std::vector<ReconstructionResult> results;
  metrics::Corpus<std::int32_t> hyps, refs;
};

template <typename T>
Reconstructions reconstruct_all(const ClassifierModel<T>& model, const EncoderPipeline& pipeline, const AttackData& data) {
  Reconstructions r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    r.results.push_back(reconstruct_gb(model, pipeline, data.ctes[i], &data.targets[i]));
    r.hyps.push_back(r.results.back().predicted_ids);
    r.refs.push_back(data.targets[i]);
  }
  return r;
}

template <typename T>
Reconstructions reconstruct_all(const DecoderModel<T>& model, const BpeTokenizer& bpe, const AttackData& data) {
  Reconstructions r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    r.results.push_back(model.generate(data.ctes[i], &bpe));
    r.hyps.push_back(r.results.back().predicted_ids);
    r.refs.push_back(data.targets[i]);
  }
  return r;
}

/// Token-level metrics in the attack's own tokenization plus normalized text
/// exact match against the original lines.
inline EvalReport score(const Reconstructions& rec, const AttackData& data) {
  if (data.size() == 0) throw EmptyCorpusError("evaluation split is empty");
  EvalReport rep;
  rep.metrics = metrics::compute_metrics(rec.hyps, rec.refs);
  rep.long_subset = metrics::compute_metrics_min_length(rec.hyps, rec.refs, 4);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    exact += text::normalize_for_comparison(rec.results[i].text) == text::normalize_for_comparison(data.texts[i]) ? 1 : 0;
    rep.length_cap_hits += rec.results[i].hit_length_cap ? 1 : 0;
  }
  rep.text_exact = static_cast<double>(exact) / static_cast<double>(data.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Restoring trained attacks from checkpoints

inline ClassifierModel<float> load_classifier(const std::filesystem::path& ckpt) {
  const auto meta = read_checkpoint_meta(ckpt);
  const auto& m = meta.at("model");
  if (m.at("attack") != "classify") throw FormatError(ckpt.string() + " is not a classify checkpoint");
  ClassifierModel<float> model(ClassifierConfig::from_json(m.at("config")), m.at("seed").get<std::uint64_t>());
  read_checkpoint_tensors<float>(ckpt, {{"params", values_of(model.parameters())}});
  return model;
}

inline DecoderModel<float> load_decoder(const std::filesystem::path& ckpt) {
  const auto meta = read_checkpoint_meta(ckpt);
  const auto& m = meta.at("model");
  if (m.at("attack") != "seq2seq") throw FormatError(ckpt.string() + " is not a seq2seq checkpoint");
  DecoderModel<float> model(DecoderConfig::from_json(m.at("config")), m.at("seed").get<std::uint64_t>());
  read_checkpoint_tensors<float>(ckpt, {{"params", values_of(model.parameters())}});
  return model;
}

}  // namespace cteinv
