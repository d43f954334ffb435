#pragma once

// The (attack x train_domain x fraction) experiment grid. Every cell trains
// one attack and evaluates it on every eval domain; a failing cell yields
// failed reports and the grid moves on.
//
// Layout under run_root:
//   data/<domain>-train.jsonl, data/<domain>-eval.jsonl (+ manifests)
//   shards/<domain>-train.cte, shards/<domain>-eval.cte (+ manifests)
//   cells/<attack>-<domain>-<fraction>/{config.cfg, model.json, checkpoints/, stats.jsonl, reports/}
//   reports.json, table.txt, results.csv, plots/<attack>.svg

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/bpe.hpp"
#include "cteinv/classify.hpp"
#include "cteinv/corpus.hpp"
#include "cteinv/encoder.hpp"
#include "cteinv/evaluation.hpp"
#include "cteinv/report.hpp"
#include "cteinv/seq2seq.hpp"
#include "cteinv/shard.hpp"
#include "cteinv/threat_model.hpp"
#include "cteinv/train.hpp"

namespace cteinv {

struct ModelSettings {
  std::vector<int> classify_hidden{};  // empty: use [encoder dim]
  int decoder_layers = 2;
  int decoder_heads = 4;
  int decoder_dim = 128;
  int decoder_ff = 512;
  int decoder_max_len = 64;
  std::size_t bpe_vocab_size = 1024;

  static ModelSettings from_key_values(const KeyValues& kv) {
    ModelSettings m;
    if (auto it = kv.find("classify_hidden"); it != kv.end()) {
      for (const auto& h : split_list(it->second)) m.classify_hidden.push_back(std::stoi(h));
    }
    m.decoder_layers = detail::kv_get<int>(kv, "decoder_layers", m.decoder_layers);
    m.decoder_heads = detail::kv_get<int>(kv, "decoder_heads", m.decoder_heads);
    m.decoder_dim = detail::kv_get<int>(kv, "decoder_dim", m.decoder_dim);
    m.decoder_ff = detail::kv_get<int>(kv, "decoder_ff", m.decoder_ff);
    m.decoder_max_len = detail::kv_get<int>(kv, "decoder_max_len", m.decoder_max_len);
    m.bpe_vocab_size = detail::kv_get<std::size_t>(kv, "bpe_vocab_size", m.bpe_vocab_size);
    return m;
  }
};

struct GridSpec {
  std::filesystem::path run_root;
  std::filesystem::path encoder;
  std::map<std::string, std::filesystem::path> corpora;  // domain -> corpus path
  CorpusFormat format = CorpusFormat::plain_lines;
  std::vector<std::string> train_domains;
  std::vector<std::string> eval_domains;
  std::vector<Fraction> fractions;
  std::vector<AttackKind> attacks;
  double eval_fraction = 0.01;
  std::uint64_t split_seed = 7;
  TrainConfig train;  // attack/domain/fraction are filled per cell
  ModelSettings models;
  bool resume = false;

  static GridSpec from_key_values(const KeyValues& kv, const std::filesystem::path& base = {}) {
    auto req = [&](const std::string& k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw FormatError("grid config: missing key '" + k + "'");
      return it->second;
    };
    auto rel = [&](const std::string& p) {
      std::filesystem::path x(p);
      return x.is_absolute() || base.empty() ? x : base / x;
    };
    GridSpec g;
    g.run_root = rel(req("run_root"));
    g.encoder = rel(req("encoder"));
    for (const auto& d : split_list(req("domains"))) g.corpora[d] = rel(req("corpus." + d));
    g.format = parse_corpus_format(detail::kv_get<std::string>(kv, "format", "plain-lines"));
    g.train_domains = split_list(req("train_domains"));
    g.eval_domains = split_list(req("eval_domains"));
    for (const auto& f : split_list(req("fractions"))) g.fractions.push_back(parse_fraction(f));
    for (const auto& a : split_list(req("attacks"))) g.attacks.push_back(parse_attack(a));
    g.eval_fraction = detail::kv_get<double>(kv, "eval_fraction", g.eval_fraction);
    g.split_seed = detail::kv_get<std::uint64_t>(kv, "split_seed", g.split_seed);
    g.train = TrainConfig::from_key_values(kv);
    g.models = ModelSettings::from_key_values(kv);
    return g;
  }
};

inline std::string fraction_slug(Fraction f) {
  switch (f) {
    case Fraction::full: return "100pct";
    case Fraction::tenth: return "10pct";
    case Fraction::hundredth: return "1pct";
    case Fraction::thousandth: return "0.1pct";
  }
  return "?";
}

inline std::filesystem::path cell_dir(const std::filesystem::path& run_root, AttackKind a, const std::string& domain,
                                      Fraction f) {
  return run_root / "cells" / (attack_name(a) + "-" + domain + "-" + fraction_slug(f));
}

/// Held-out and training material of one domain, encoded once per grid.
struct DomainData {
  CorpusSplit train, eval;
  Shard train_shard, eval_shard;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << s;
  }
  std::filesystem::rename(tmp, p);
}

/// Loads a cached shard when it exists and matches the encoder and split,
/// otherwise (re)encodes.
inline Shard ensure_shard(const EncoderPipeline& pipeline, const CorpusSplit& split, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path) && fs::exists(manifest_path_for(path))) {
    try {
      const auto m = read_shard_manifest(path);
      if (m.encoder_digest == to_hex(pipeline.handle().parameter_digest) && m.corpus_checksum == split.source_checksum &&
          m.sample_count == split.sample_count()) {
        return Shard::read(path);
      }
    } catch (const Error&) {
    }
  }
  fs::create_directories(path.parent_path());
  batch_encode(pipeline, split, path);
  return Shard::read(path);
}

}  // namespace detail

/// Eval-only domains skip encoding their training split.
inline DomainData prepare_domain(const GridSpec& g, const EncoderPipeline& pipeline, const std::string& domain,
                                 bool need_train = true) {
  auto it = g.corpora.find(domain);
  if (it == g.corpora.end()) throw InvalidArgument("no corpus configured for domain '" + domain + "'");
  auto corpus = load_corpus(it->second, g.format);
  corpus.name = domain;
  auto [train, eval] = split_train_eval(corpus, g.eval_fraction, g.split_seed);
  const auto data = g.run_root / "data";
  std::filesystem::create_directories(data);
  write_jsonl(train, data / (domain + "-train.jsonl"));
  write_manifest(train, data / (domain + "-train.jsonl.manifest.json"));
  write_jsonl(eval, data / (domain + "-eval.jsonl"));
  write_manifest(eval, data / (domain + "-eval.jsonl.manifest.json"));
  DomainData d{train, eval, {}, detail::ensure_shard(pipeline, eval, g.run_root / "shards" / (domain + "-eval.cte"))};
  if (need_train) d.train_shard = detail::ensure_shard(pipeline, train, g.run_root / "shards" / (domain + "-train.cte"));
  return d;
}

struct CellOutcome {
  std::vector<EvalReport> reports;
  TrainStats stats;
};

using GridLog = std::function<void(const std::string&)>;

/// Trains and evaluates one cell. Throws on any failure; the grid runner
/// turns that into failed reports.
inline CellOutcome run_cell(const GridSpec& g, const EncoderPipeline& pipeline,
                            const std::map<std::string, DomainData>& data, AttackKind attack,
                            const std::string& train_domain, Fraction fraction, const GridLog& log = {}) {
  namespace fs = std::filesystem;
  TrainConfig cfg = g.train;
  cfg.attack = attack;
  cfg.train_domain = train_domain;
  cfg.fraction = fraction;
  const auto dir = cell_dir(g.run_root, attack, train_domain, fraction);
  fs::create_directories(dir);

  require_capabilities(attack, capability_for(attack == AttackKind::classify ? Scenario::gray_box : Scenario::black_box,
                                              std::numeric_limits<std::uint64_t>::max()));
  const auto& dom = data.at(train_domain);
  const auto subset = subsample(dom.train, fraction, cfg.seed);
  const auto indices = locate_samples(dom.train, subset);

  TrainContext ctx;
  ctx.run_dir = dir;
  ctx.shard_digest = dom.train_shard.header.encoder_digest;
  ctx.encoder_digest = [&] { return pipeline.compute_digest(); };
  ctx.resume = g.resume;
  if (log) ctx.log = [&](const std::string& s) { log(fs::path(dir).filename().string() + ": " + s); };
  const auto digest_before = to_hex(pipeline.compute_digest());

  CellOutcome out;
  std::vector<std::pair<std::string, Reconstructions>> recs;
  std::map<std::string, AttackData> eval_sets;
  const int d = static_cast<int>(pipeline.config().dim);

  if (attack == AttackKind::classify) {
    const auto train_data = build_classify_data(dom.train_shard, dom.train, pipeline, indices);
    for (const auto& e : g.eval_domains) {
      eval_sets[e] = build_classify_data(data.at(e).eval_shard, data.at(e).eval, pipeline);
    }
    auto hidden = g.models.classify_hidden.empty() ? std::vector<int>{d} : g.models.classify_hidden;
    ClassifierModel<float> model(ClassifierConfig{d, hidden, static_cast<int>(pipeline.tokenizer().vocab_size())},
                                 derive_seed(cfg.seed, 101));
    detail::write_text(dir / "model.json", model.describe().dump(2) + "\n");
    ctx.checkpoint_extra = {{"tokenizer_digest", to_hex(pipeline.tokenizer().digest())}};
    out.stats = train(model, train_data.examples<ClassifyExample>(),
                      eval_sets.at(train_domain).examples<ClassifyExample>(), cfg, ctx);
    for (const auto& e : g.eval_domains) recs.emplace_back(e, reconstruct_all(model, pipeline, eval_sets.at(e)));
  } else {
    const auto bpe = BpeTokenizer::train(subset, g.models.bpe_vocab_size);
    bpe.save(dir / "tokenizer.json");
    const auto train_data = build_seq2seq_data(dom.train_shard, dom.train, bpe, indices);
    for (const auto& e : g.eval_domains) eval_sets[e] = build_seq2seq_data(data.at(e).eval_shard, data.at(e).eval, bpe);
    const auto& m = g.models;
    DecoderConfig dc{m.decoder_layers, m.decoder_heads, m.decoder_dim,
                     m.decoder_ff,     d,               static_cast<int>(bpe.vocab_size()),
                     m.decoder_max_len};
    DecoderModel<float> model(dc, derive_seed(cfg.seed, 202));
    detail::write_text(dir / "model.json", model.describe().dump(2) + "\n");
    ctx.checkpoint_extra = {{"tokenizer_digest", to_hex(bpe.digest())}};
    out.stats = train(model, train_data.examples<Seq2SeqExample>(),
                      eval_sets.at(train_domain).examples<Seq2SeqExample>(), cfg, ctx);
    for (const auto& e : g.eval_domains) recs.emplace_back(e, reconstruct_all(model, bpe, eval_sets.at(e)));
  }

  const auto digest_after = to_hex(pipeline.compute_digest());
  for (const auto& [e, rec] : recs) {
    auto r = score(rec, eval_sets.at(e));
    r.attack = attack_name(attack);
    r.train_domain = train_domain;
    r.eval_domain = e;
    r.fraction = fraction_value(fraction);
    r.train_lines = subset.sample_count();
    r.encoder_digest_before = digest_before;
    r.encoder_digest_after = digest_after;
    detail::write_text(dir / "reports" / (e + ".json"), r.to_json().dump(2) + "\n");
    out.reports.push_back(std::move(r));
  }
  return out;
}

inline void write_grid_outputs(const std::filesystem::path& run_root, const std::vector<EvalReport>& reports) {
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) all.push_back(r.to_json());
  detail::write_text(run_root / "reports.json", all.dump(2) + "\n");
  std::string table;
  for (const auto& m : build_matrices(reports)) table += render_text(m) + "\n";
  detail::write_text(run_root / "table.txt", table);
  detail::write_text(run_root / "results.csv", render_csv(reports));
  std::set<std::string> attacks;
  for (const auto& r : reports) attacks.insert(r.attack);
  for (const auto& a : attacks) detail::write_text(run_root / "plots" / (a + ".svg"), render_svg(reports, a));
}

inline std::vector<EvalReport> read_reports(const std::filesystem::path& reports_json) {
  std::ifstream in(reports_json);
  if (!in) throw IoError("cannot read " + reports_json.string());
  std::vector<EvalReport> out;
  for (const auto& j : nlohmann::json::parse(in)) out.push_back(EvalReport::from_json(j));
  return out;
}

/// Asserts that every cell's serialized config agrees on the shared
/// hyperparameters.
inline void check_comparability(const std::vector<std::filesystem::path>& cell_dirs) {
  std::optional<KeyValues> ref;
  std::filesystem::path ref_dir;
  for (const auto& d : cell_dirs) {
    if (!std::filesystem::exists(d / "config.cfg")) continue;
    const auto kv = shared_hyperparameters(TrainConfig::from_key_values(read_key_values(d / "config.cfg")));
    if (!ref) {
      ref = kv;
      ref_dir = d;
    } else if (kv != *ref) {
      throw InvalidArgument("hyperparameters of " + d.string() + " differ from " + ref_dir.string());
    }
  }
}

/// One report per (attack, train_domain, fraction, eval_domain).
inline std::vector<EvalReport> run_experiment_grid(const GridSpec& g, const GridLog& log = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(g.run_root);
  std::vector<EvalReport> reports;

  std::optional<EncoderPipeline> pipeline;
  std::string setup_error;
  std::map<std::string, DomainData> data;
  std::map<std::string, std::string> domain_errors;
  try {
    pipeline.emplace(EncoderPipeline::load(g.encoder));
  } catch (const std::exception& e) {
    setup_error = std::string("encoder: ") + e.what();
  }
  if (pipeline) {
    std::set<std::string> needed(g.train_domains.begin(), g.train_domains.end());
    needed.insert(g.eval_domains.begin(), g.eval_domains.end());
    for (const auto& dname : needed) {
      try {
        if (log) log("preparing domain " + dname);
        const bool trains = std::find(g.train_domains.begin(), g.train_domains.end(), dname) != g.train_domains.end();
        data.emplace(dname, prepare_domain(g, *pipeline, dname, trains));
      } catch (const std::exception& e) {
        domain_errors[dname] = e.what();
      }
    }
  }

  std::vector<fs::path> dirs;
  for (auto attack : g.attacks) {
    for (const auto& td : g.train_domains) {
      for (auto f : g.fractions) {
        auto fail_all = [&](const std::string& why) {
          for (const auto& e : g.eval_domains) {
            reports.push_back(EvalReport::failed(attack_name(attack), td, e, fraction_value(f), why));
          }
        };
        if (!setup_error.empty()) {
          fail_all(setup_error);
          continue;
        }
        std::string missing;
        if (domain_errors.count(td)) missing = td + ": " + domain_errors.at(td);
        for (const auto& e : g.eval_domains) {
          if (domain_errors.count(e)) missing = e + ": " + domain_errors.at(e);
        }
        if (!missing.empty()) {
          fail_all(missing);
          continue;
        }
        if (log) log("cell " + attack_name(attack) + " " + td + " " + fraction_label(f));
        try {
          auto out = run_cell(g, *pipeline, data, attack, td, f, log);
          reports.insert(reports.end(), out.reports.begin(), out.reports.end());
          dirs.push_back(cell_dir(g.run_root, attack, td, f));
        } catch (const std::exception& e) {
          if (log) log(std::string("cell failed: ") + e.what());
          fail_all(e.what());
        }
      }
    }
  }
  check_comparability(dirs);
  write_grid_outputs(g.run_root, reports);
  return reports;
}

}  // namespace cteinv
