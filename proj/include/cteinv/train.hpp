#pragma once

// Config-driven optimisation loop shared by both attacks.
//
// Run directory layout:
//   config.cfg           flat key = value configuration, written first
//   checkpoints/last.ckpt  weights + optimizer state after the latest epoch
//   checkpoints/best.ckpt  weights of the best epoch by eval token accuracy
//   stats.jsonl          one JSON line per epoch
//   reports/             evaluation reports

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/checkpoint.hpp"
#include "cteinv/corpus.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/hashing.hpp"
#include "cteinv/optim.hpp"
#include "cteinv/random.hpp"
#include "cteinv/threat_model.hpp"

namespace cteinv {

// ---------------------------------------------------------------------------
// Flat key-value config files

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "<config>") {
  KeyValues kv;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw FormatError(origin + ":" + std::to_string(n) + ": expected key = value");
    const auto key = std::string(text::trim(t.substr(0, eq)));
    const auto value = std::string(text::trim(t.substr(eq + 1)));
    if (key.empty()) throw FormatError(origin + ":" + std::to_string(n) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  return parse_key_values(in, path.string());
}

inline std::string format_key_values(const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      auto t = std::string(text::trim(cur));
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  auto t = std::string(text::trim(cur));
  if (!t.empty()) out.push_back(t);
  return out;
}

inline std::string join_list(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ",";
    out += x;
  }
  return out;
}

namespace detail {

template <typename T>
T kv_get(const KeyValues& kv, const std::string& key, T fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::istringstream is(it->second);
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    std::string s;
    is >> s;
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw FormatError("config key '" + key + "' expects true/false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return it->second;
  } else {
    if (!(is >> v)) throw FormatError("config key '" + key + "' has invalid value '" + it->second + "'");
    return v;
  }
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct TrainConfig {
  AttackKind attack = AttackKind::classify;
  std::string train_domain = "train";
  Fraction fraction = Fraction::full;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;  // maximum; early stopping may end sooner
  std::size_t patience = 3;  // epochs without eval token-accuracy gain; 0 disables
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  bool shuffle = true;

  KeyValues to_key_values() const {
    return {{"attack", attack_name(attack)},
            {"train_domain", train_domain},
            {"fraction", detail::fmt_double(fraction_value(fraction))},
            {"batch_size", std::to_string(batch_size)},
            {"epochs", std::to_string(epochs)},
            {"patience", std::to_string(patience)},
            {"learning_rate", detail::fmt_double(learning_rate)},
            {"weight_decay", detail::fmt_double(weight_decay)},
            {"seed", std::to_string(seed)},
            {"shuffle", shuffle ? "true" : "false"}};
  }

  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c;
    c.attack = parse_attack(detail::kv_get<std::string>(kv, "attack", "classify"));
    c.train_domain = detail::kv_get<std::string>(kv, "train_domain", c.train_domain);
    c.fraction = parse_fraction(detail::kv_get<std::string>(kv, "fraction", "1"));
    c.batch_size = detail::kv_get<std::size_t>(kv, "batch_size", c.batch_size);
    c.epochs = detail::kv_get<std::size_t>(kv, "epochs", c.epochs);
    c.patience = detail::kv_get<std::size_t>(kv, "patience", c.patience);
    c.learning_rate = detail::kv_get<double>(kv, "learning_rate", c.learning_rate);
    c.weight_decay = detail::kv_get<double>(kv, "weight_decay", c.weight_decay);
    c.seed = detail::kv_get<std::uint64_t>(kv, "seed", c.seed);
    c.shuffle = detail::kv_get<bool>(kv, "shuffle", c.shuffle);
    return c;
  }

  AdamWConfig optimizer() const {
    AdamWConfig a;
    a.learning_rate = learning_rate;
    a.weight_decay = weight_decay;
    return a;
  }
};

/// The hyperparameters both attacks share; runs in one grid must agree on
/// all of them.
inline KeyValues shared_hyperparameters(const TrainConfig& c) {
  auto kv = c.to_key_values();
  kv.erase("attack");
  kv.erase("train_domain");
  kv.erase("fraction");
  return kv;
}

struct TrainStats {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_token_accuracy;
  std::vector<double> eval_token_accuracy;
  double wall_seconds = 0;
  std::size_t best_epoch = 0;  // 1-based; 0 if no epoch ran
  bool stopped_early = false;
};

// ---------------------------------------------------------------------------

/// Per-epoch batch plan: a partition of [0, n) into consecutive chunks of a
/// (optionally shuffled) order. Shuffling is seeded by (seed, epoch).
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                          std::uint64_t seed, std::uint64_t epoch = 0) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (n == 0) throw EmptyCorpusError("make_batches: empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(derive_seed(seed, epoch));
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

/// What the optimisation loop needs from an attack model.
template <typename M, typename Example>
concept TrainableModel = requires(M m, const M cm, std::span<const Example> batch) {
  { m.parameters() };
  { m.step(batch) } -> std::same_as<StepResult>;
  { cm.evaluate(batch) } -> std::same_as<StepResult>;
  { cm.describe() } -> std::convertible_to<nlohmann::json>;
};

struct TrainContext {
  std::filesystem::path run_dir;
  /// Digest the training data (shard) was produced with.
  Digest shard_digest{};
  /// Recomputes the live encoder digest; called before and after training.
  std::function<Digest()> encoder_digest;
  /// Extra metadata stored in every checkpoint (tokenizer hash, ...).
  nlohmann::json checkpoint_extra = nlohmann::json::object();
  bool resume = false;
  /// Stop after this many epochs in this call (simulates an interruption).
  std::optional<std::size_t> stop_after_epochs;
  std::function<void(const std::string&)> log;
};

namespace detail {

inline void append_jsonl(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::app);
  if (!out) throw IoError("cannot append to " + p.string());
  out << j.dump() << '\n';
}

template <typename Model, typename Example>
StepResult evaluate_all(const Model& model, const std::vector<Example>& data, std::size_t batch_size) {
  StepResult total;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    const auto n = std::min(batch_size, data.size() - i);
    const auto r = model.evaluate(std::span<const Example>(data.data() + i, n));
    total.loss_sum += r.loss_sum;
    total.correct += r.correct;
    total.tokens += r.tokens;
  }
  return total;
}

}  // namespace detail

/// Trains `model` in place. On return the model holds the weights of the
/// best epoch by eval token accuracy (last epoch when no eval data).
template <typename Model, typename Example>
  requires TrainableModel<Model, Example>
TrainStats train(Model& model, const std::vector<Example>& train_data, const std::vector<Example>& eval_data,
                 const TrainConfig& cfg, const TrainContext& ctx) {
  namespace fs = std::filesystem;
  if (train_data.empty()) throw EmptyCorpusError("train: no training pairs");
  if (!ctx.encoder_digest) throw InvalidArgument("train: encoder digest callback required");
  const Digest before = ctx.encoder_digest();
  if (before != ctx.shard_digest) {
    throw DigestMismatch("encoder digest " + to_hex(before) + " differs from shard digest " + to_hex(ctx.shard_digest));
  }

  fs::create_directories(ctx.run_dir / "checkpoints");
  fs::create_directories(ctx.run_dir / "reports");
  const auto config_path = ctx.run_dir / "config.cfg";
  const auto last_path = ctx.run_dir / "checkpoints" / "last.ckpt";
  const auto best_path = ctx.run_dir / "checkpoints" / "best.ckpt";
  const auto stats_path = ctx.run_dir / "stats.jsonl";

  auto params = model.parameters();
  using Scalar = std::remove_reference_t<decltype(params[0]->value(0, 0))>;
  AdamW<Scalar> opt(params, cfg.optimizer());

  TrainStats stats;
  std::size_t start_epoch = 0;
  double best_eval = -1;
  std::size_t bad_epochs = 0;

  if (ctx.resume && fs::exists(last_path)) {
    const auto meta = read_checkpoint_meta(last_path);
    if (TrainConfig::from_key_values(meta.at("train_config").get<KeyValues>()).to_key_values() != cfg.to_key_values()) {
      throw InvalidArgument("resume: configuration differs from the checkpointed run");
    }
    read_checkpoint_tensors<Scalar>(last_path, {{"params", values_of(params)},
                                                {"adam_m", pointers_to(opt.first_moments())},
                                                {"adam_v", pointers_to(opt.second_moments())}});
    opt.set_steps(meta.at("optimizer_steps").get<std::uint64_t>());
    start_epoch = meta.at("epoch").get<std::size_t>();
    best_eval = meta.at("best_eval").get<double>();
    bad_epochs = meta.at("bad_epochs").get<std::size_t>();
    stats.best_epoch = meta.at("best_epoch").get<std::size_t>();
    const auto& h = meta.at("history");
    stats.epoch_loss = h.at("loss").get<std::vector<double>>();
    stats.epoch_token_accuracy = h.at("token_accuracy").get<std::vector<double>>();
    stats.eval_token_accuracy = h.at("eval_token_accuracy").get<std::vector<double>>();
  } else {
    std::ofstream out(config_path);
    if (!out) throw IoError("cannot write " + config_path.string());
    out << format_key_values(cfg.to_key_values());
    std::ofstream(stats_path, std::ios::trunc);
  }

  auto checkpoint_meta = [&](std::size_t epoch) {
    nlohmann::json meta = ctx.checkpoint_extra;
    meta["train_config"] = cfg.to_key_values();
    meta["model"] = model.describe();
    meta["encoder_digest"] = to_hex(before);
    meta["seed"] = cfg.seed;
    meta["epoch"] = epoch;
    meta["optimizer_steps"] = opt.steps();
    meta["best_eval"] = best_eval;
    meta["best_epoch"] = stats.best_epoch;
    meta["bad_epochs"] = bad_epochs;
    meta["history"] = {{"loss", stats.epoch_loss},
                       {"token_accuracy", stats.epoch_token_accuracy},
                       {"eval_token_accuracy", stats.eval_token_accuracy}};
    return meta;
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t ran = 0;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    if (cfg.patience > 0 && bad_epochs >= cfg.patience) break;
    if (ctx.stop_after_epochs && ran >= *ctx.stop_after_epochs) break;
    StepResult sum;
    for (const auto& idx : make_batches(train_data.size(), cfg.batch_size, cfg.shuffle, cfg.seed, epoch)) {
      std::vector<Example> batch;
      batch.reserve(idx.size());
      for (auto i : idx) batch.push_back(train_data[i]);
      opt.zero_grad();
      const auto r = model.step(std::span<const Example>(batch));
      if (!std::isfinite(r.loss_sum)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch + 1) + " after " +
                           std::to_string(opt.steps()) + " optimizer steps");
      }
      opt.step();
      sum.loss_sum += r.loss_sum;
      sum.correct += r.correct;
      sum.tokens += r.tokens;
    }
    const double loss = sum.loss_sum / static_cast<double>(sum.tokens);
    const double acc = static_cast<double>(sum.correct) / static_cast<double>(sum.tokens);
    double eval_acc = acc;
    if (!eval_data.empty()) {
      const auto e = detail::evaluate_all(model, eval_data, cfg.batch_size);
      eval_acc = static_cast<double>(e.correct) / static_cast<double>(e.tokens);
    }
    stats.epoch_loss.push_back(loss);
    stats.epoch_token_accuracy.push_back(acc);
    stats.eval_token_accuracy.push_back(eval_acc);
    if (eval_acc > best_eval) {
      best_eval = eval_acc;
      stats.best_epoch = epoch + 1;
      bad_epochs = 0;
      write_checkpoint<Scalar>(best_path, checkpoint_meta(epoch + 1), {{"params", values_of(params)}});
    } else {
      ++bad_epochs;
    }
    write_checkpoint<Scalar>(last_path, checkpoint_meta(epoch + 1),
                             {{"params", values_of(params)},
                              {"adam_m", pointers_to(opt.first_moments())},
                              {"adam_v", pointers_to(opt.second_moments())}});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::append_jsonl(stats_path, {{"epoch", epoch + 1},
                                      {"loss", loss},
                                      {"token_accuracy", acc},
                                      {"eval_token_accuracy", eval_acc},
                                      {"wall_seconds", secs}});
    if (ctx.log) {
      std::ostringstream os;
      os << "epoch " << epoch + 1 << " loss " << loss << " acc " << acc << " eval_acc " << eval_acc;
      ctx.log(os.str());
    }
    ++ran;
  }
  stats.stopped_early = cfg.patience > 0 && bad_epochs >= cfg.patience && stats.epoch_loss.size() < cfg.epochs;
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (stats.best_epoch > 0 && fs::exists(best_path)) {
    read_checkpoint_tensors<Scalar>(best_path, {{"params", values_of(params)}});
  }
  const Digest after = ctx.encoder_digest();
  if (after != before) throw DigestMismatch("encoder parameters changed during training");
  return stats;
}

}  // namespace cteinv
