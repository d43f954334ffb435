#pragma once

// Gray-box attack: an MLP that maps every CTE row independently to an
// encoder vocabulary id. Text comes back through the given tok^-1.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/encoder.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/nn.hpp"
#include "cteinv/random.hpp"
#include "cteinv/reconstruction.hpp"

namespace cteinv {

struct ClassifierConfig {
  int input_dim = 0;
  std::vector<int> hidden;  // empty = linear probe
  int vocab_size = 0;

  nlohmann::json to_json() const { return {{"input_dim", input_dim}, {"hidden", hidden}, {"vocab_size", vocab_size}}; }
  static ClassifierConfig from_json(const nlohmann::json& j) {
    return {j.at("input_dim").get<int>(), j.at("hidden").get<std::vector<int>>(), j.at("vocab_size").get<int>()};
  }

  /// Closed-form trainable parameter count.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    std::size_t in = static_cast<std::size_t>(input_dim);
    for (int h : hidden) {
      n += in * static_cast<std::size_t>(h) + static_cast<std::size_t>(h);
      in = static_cast<std::size_t>(h);
    }
    return n + in * static_cast<std::size_t>(vocab_size) + static_cast<std::size_t>(vocab_size);
  }
};

/// One training pair: CTE rows and the target id per row.
struct ClassifyExample {
  const CteSequence* cte = nullptr;
  const std::vector<std::int32_t>* ids = nullptr;
};

template <typename T = float>
class ClassifierModel {
 public:
  ClassifierModel(ClassifierConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    if (cfg_.input_dim < 1 || cfg_.vocab_size < 1) throw InvalidArgument("classifier dims must be positive");
    int in = cfg_.input_dim;
    for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
      if (cfg_.hidden[i] < 1) throw InvalidArgument("hidden width must be positive (got " + std::to_string(cfg_.hidden[i]) + ")");
      layers_.emplace_back("hidden" + std::to_string(i), in, cfg_.hidden[i]);
      in = cfg_.hidden[i];
    }
    layers_.emplace_back("output", in, cfg_.vocab_size);
    Rng rng(seed);
    for (auto& l : layers_) l.init(rng);
  }

  const ClassifierConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  nn::ParamList<T> parameters() {
    nn::ParamList<T> ps;
    for (auto& l : layers_) l.collect(ps);
    return ps;
  }
  std::size_t parameter_count() const { return const_cast<ClassifierModel*>(this)->count(); }

  /// Row-wise logits; each row is classified independently of the others.
  nn::Matrix<T> forward(const nn::Matrix<T>& x) const {
    check_dim(x);
    nn::Matrix<T> h = x;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = nn::gelu(layers_[i].forward(h));
    return layers_.back().forward(h);
  }

  std::vector<std::int32_t> predict(const nn::Matrix<T>& x) const {
    const auto logits = forward(x);
    std::vector<std::int32_t> ids(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(nn::argmax_row(logits.row(i)));
    return ids;
  }

  /// Mean cross-entropy over all rows; gradients accumulate into the
  /// parameters (call zero_grad first).
  StepResult loss_and_grad(const nn::Matrix<T>& x, const std::vector<std::int32_t>& targets) {
    check_dim(x);
    if (static_cast<std::size_t>(x.rows()) != targets.size()) throw InvalidArgument("targets do not match rows");
    std::vector<nn::Matrix<T>> pre, act;
    nn::Matrix<T> h = x;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      act.push_back(h);
      pre.push_back(layers_[i].forward(h));
      h = nn::gelu(pre.back());
    }
    const auto logits = layers_.back().forward(h);
    for (auto t : targets) {
      if (t < 0 || t >= cfg_.vocab_size) throw IdOutOfRange(0, t, static_cast<std::size_t>(cfg_.vocab_size));
    }
    auto ce = nn::softmax_cross_entropy<T>(logits, targets, T(1) / static_cast<T>(targets.size()));
    nn::Matrix<T> d = layers_.back().backward(h, ce.dlogits);
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
      d = nn::gelu_backward(pre[i], d);
      d = layers_[i].backward(act[i], d);
    }
    return {ce.loss_sum, ce.correct, targets.size()};
  }

  /// Training-harness entry point: stacks every example's rows.
  StepResult step(std::span<const ClassifyExample> batch) {
    auto [x, y] = stack(batch);
    return loss_and_grad(x, y);
  }

  /// Loss/accuracy without touching gradients.
  StepResult evaluate(std::span<const ClassifyExample> batch) const {
    auto [x, y] = stack(batch);
    const auto logits = forward(x);
    auto ce = nn::softmax_cross_entropy<T>(logits, y, T(1));
    return {ce.loss_sum, ce.correct, y.size()};
  }

  nlohmann::json describe() const {
    return {{"attack", "classify"}, {"config", cfg_.to_json()}, {"seed", seed_}, {"parameter_count", parameter_count()}};
  }

 private:
  void check_dim(const nn::Matrix<T>& x) const {
    if (x.cols() != cfg_.input_dim) {
      throw InvalidArgument("CTE dim " + std::to_string(x.cols()) + " does not match classifier input dim " +
                            std::to_string(cfg_.input_dim));
    }
  }

  std::size_t count() { return nn::count_parameters(parameters()); }

  static std::pair<nn::Matrix<T>, std::vector<std::int32_t>> stack(std::span<const ClassifyExample> batch) {
    Eigen::Index rows = 0, cols = 0;
    for (const auto& e : batch) {
      if (e.cte->length() != e.ids->size()) {
        throw InvalidArgument("CTE length " + std::to_string(e.cte->length()) + " differs from alignment length " +
                              std::to_string(e.ids->size()));
      }
      rows += e.cte->values.rows();
      cols = e.cte->values.cols();
    }
    nn::Matrix<T> x(rows, cols);
    std::vector<std::int32_t> y;
    y.reserve(static_cast<std::size_t>(rows));
    Eigen::Index r = 0;
    for (const auto& e : batch) {
      x.middleRows(r, e.cte->values.rows()) = e.cte->values.template cast<T>();
      r += e.cte->values.rows();
      y.insert(y.end(), e.ids->begin(), e.ids->end());
    }
    return {std::move(x), std::move(y)};
  }

  ClassifierConfig cfg_;
  std::uint64_t seed_;
  std::vector<nn::Linear<T>> layers_;
};

template <typename T = float>
ClassifierModel<T> init_classifier(int d, int vocab_size, std::vector<int> hidden, std::uint64_t seed) {
  return ClassifierModel<T>(ClassifierConfig{d, std::move(hidden), vocab_size}, seed);
}

/// Argmax id per CTE row, detokenized with the given tokenizer. When a
/// reference alignment is supplied, per-position match flags are filled.
template <typename T, typename Detokenizer>
ReconstructionResult reconstruct_gb(const ClassifierModel<T>& model, const Detokenizer& detok, const CteSequence& cte,
                                    const std::vector<std::int32_t>* reference_ids = nullptr) {
  ReconstructionResult r;
  r.predicted_ids = model.predict(cte.values.template cast<T>());
  r.text = detok.detokenize(r.predicted_ids);
  if (reference_ids) {
    std::vector<bool> flags(r.predicted_ids.size(), false);
    for (std::size_t i = 0; i < flags.size() && i < reference_ids->size(); ++i) {
      flags[i] = r.predicted_ids[i] == (*reference_ids)[i];
    }
    r.match_flags = std::move(flags);
  }
  return r;
}

}  // namespace cteinv
