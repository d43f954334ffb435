#pragma once

// Black-box attack: a pre-LN transformer decoder that cross-attends over a
// whole sentence's CTEs (projected to the model width) and emits custom
// BPE ids autoregressively. Output length is independent of CTE length.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/bpe.hpp"
#include "cteinv/encoder.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/nn.hpp"
#include "cteinv/random.hpp"
#include "cteinv/reconstruction.hpp"

namespace cteinv {

struct DecoderConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ff_dim = 256;
  int memory_dim = 64;  // CTE width d
  int vocab_size = 0;   // V', specials included
  int max_output_len = 64;

  nlohmann::json to_json() const {
    return {{"layers", layers},         {"heads", heads},           {"model_dim", model_dim},
            {"ff_dim", ff_dim},         {"memory_dim", memory_dim}, {"vocab_size", vocab_size},
            {"max_output_len", max_output_len}};
  }
  static DecoderConfig from_json(const nlohmann::json& j) {
    DecoderConfig c;
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.ff_dim = j.at("ff_dim").get<int>();
    c.memory_dim = j.at("memory_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_output_len = j.at("max_output_len").get<int>();
    return c;
  }

  void validate() const {
    if (layers < 1 || heads < 1 || model_dim < 1 || ff_dim < 1 || memory_dim < 1 || max_output_len < 2) {
      throw InvalidArgument("decoder dimensions must be positive");
    }
    if (vocab_size <= BpeTokenizer::kNumSpecials) throw InvalidArgument("decoder vocabulary must include content ids");
    if (model_dim % heads != 0) {
      throw InvalidArgument("heads (" + std::to_string(heads) + ") must divide model dim (" + std::to_string(model_dim) + ")");
    }
  }

  /// Closed-form trainable parameter count.
  std::size_t parameter_count() const {
    const std::size_t D = static_cast<std::size_t>(model_dim), F = static_cast<std::size_t>(ff_dim);
    const std::size_t V = static_cast<std::size_t>(vocab_size), M = static_cast<std::size_t>(memory_dim);
    const std::size_t attention = 4 * (D * D + D);
    const std::size_t per_layer = 2 * attention + 3 * (2 * D) + (D * F + F) + (F * D + D);
    return V * D + static_cast<std::size_t>(max_output_len) * D + (M * D + D) +
           static_cast<std::size_t>(layers) * per_layer + 2 * D + (D * V + V);
  }
};

/// Teacher-forcing pair: CTE memory and the target BPE ids (no BOS/EOS).
struct Seq2SeqExample {
  const CteSequence* cte = nullptr;
  const std::vector<std::int32_t>* ids = nullptr;
};

template <typename T = float>
class DecoderModel {
 public:
  struct Layer {
    nn::LayerNorm<T> self_norm;
    nn::MultiHeadAttention<T> self_attention;
    nn::LayerNorm<T> cross_norm;
    nn::MultiHeadAttention<T> cross_attention;
    nn::LayerNorm<T> ff_norm;
    nn::Linear<T> ff_in, ff_out;
  };

  DecoderModel(DecoderConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    token_embedding_ = nn::Parameter<T>("token_embedding", cfg_.vocab_size, cfg_.model_dim);
    position_embedding_ = nn::Parameter<T>("position_embedding", cfg_.max_output_len, cfg_.model_dim);
    memory_proj_ = nn::Linear<T>("memory_proj", cfg_.memory_dim, cfg_.model_dim);
    for (int i = 0; i < cfg_.layers; ++i) {
      const std::string p = "layer" + std::to_string(i);
      layers_.push_back(Layer{nn::LayerNorm<T>(p + ".self_norm", cfg_.model_dim),
                              nn::MultiHeadAttention<T>(p + ".self_attention", cfg_.model_dim, cfg_.heads),
                              nn::LayerNorm<T>(p + ".cross_norm", cfg_.model_dim),
                              nn::MultiHeadAttention<T>(p + ".cross_attention", cfg_.model_dim, cfg_.heads),
                              nn::LayerNorm<T>(p + ".ff_norm", cfg_.model_dim),
                              nn::Linear<T>(p + ".ff_in", cfg_.model_dim, cfg_.ff_dim),
                              nn::Linear<T>(p + ".ff_out", cfg_.ff_dim, cfg_.model_dim)});
    }
    final_norm_ = nn::LayerNorm<T>("final_norm", cfg_.model_dim);
    output_ = nn::Linear<T>("output", cfg_.model_dim, cfg_.vocab_size);

    Rng rng(seed);
    nn::fill_normal(token_embedding_.value, rng, 0.02);
    nn::fill_normal(position_embedding_.value, rng, 0.02);
    memory_proj_.init(rng);
    for (auto& l : layers_) {
      l.self_attention.init(rng);
      l.cross_attention.init(rng);
      l.ff_in.init(rng);
      l.ff_out.init(rng);
    }
    output_.init(rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  nn::ParamList<T> parameters() {
    nn::ParamList<T> ps{&token_embedding_, &position_embedding_};
    memory_proj_.collect(ps);
    for (auto& l : layers_) {
      l.self_norm.collect(ps);
      l.self_attention.collect(ps);
      l.cross_norm.collect(ps);
      l.cross_attention.collect(ps);
      l.ff_norm.collect(ps);
      l.ff_in.collect(ps);
      l.ff_out.collect(ps);
    }
    final_norm_.collect(ps);
    output_.collect(ps);
    return ps;
  }
  std::size_t parameter_count() const { return nn::count_parameters(const_cast<DecoderModel*>(this)->parameters()); }

  /// Teacher-forced logits (T x V'). Row t depends on shifted_ids[0..t] and
  /// the whole memory only.
  nn::Matrix<T> forward(const nn::Matrix<T>& memory, const std::vector<std::int32_t>& shifted_ids) const {
    return output_.forward(hidden(memory, shifted_ids, nullptr));
  }

  /// Greedy decoding from BOS until EOS or max_output_len.
  ReconstructionResult generate(const nn::Matrix<T>& memory, const BpeTokenizer* tokenizer = nullptr) const {
    ReconstructionResult r;
    std::vector<std::int32_t> ids{BpeTokenizer::kBos};
    const nn::Matrix<T> mem = memory_proj_.forward(memory);
    while (true) {
      const auto h = run_layers(mem, ids, nullptr);
      const nn::Matrix<T> last = final_norm_.forward(h.bottomRows(1));
      const auto next = static_cast<std::int32_t>(nn::argmax_row(output_.forward(last).row(0)));
      if (next == BpeTokenizer::kEos) break;
      ids.push_back(next);
      if (static_cast<int>(ids.size()) >= cfg_.max_output_len) {
        r.hit_length_cap = true;
        break;
      }
    }
    r.predicted_ids.assign(ids.begin() + 1, ids.end());
    if (tokenizer) r.text = tokenizer->decode(r.predicted_ids);
    return r;
  }

  ReconstructionResult generate(const CteSequence& memory, const BpeTokenizer* tokenizer = nullptr) const {
    return generate(memory.values.template cast<T>(), tokenizer);
  }

  /// Teacher-forcing input/target for a target id sequence: BOS + ids and
  /// ids + EOS, cut to max_output_len.
  std::pair<std::vector<std::int32_t>, std::vector<std::int32_t>> teacher_forcing(const std::vector<std::int32_t>& ids) const {
    std::vector<std::int32_t> in{BpeTokenizer::kBos}, out;
    in.insert(in.end(), ids.begin(), ids.end());
    out = ids;
    out.push_back(BpeTokenizer::kEos);
    const auto cap = static_cast<std::size_t>(cfg_.max_output_len);
    if (in.size() > cap) {
      in.resize(cap);
      out.resize(cap);
    }
    return {std::move(in), std::move(out)};
  }

  /// Mean token cross-entropy over the batch, gradients accumulated.
  StepResult step(std::span<const Seq2SeqExample> batch) { return run_batch(batch, true); }

  StepResult evaluate(std::span<const Seq2SeqExample> batch) const {
    return const_cast<DecoderModel*>(this)->run_batch(batch, false);
  }

  nlohmann::json describe() const {
    return {{"attack", "seq2seq"}, {"config", cfg_.to_json()}, {"seed", seed_}, {"parameter_count", parameter_count()}};
  }

 private:
  struct LayerCache {
    nn::Matrix<T> x_in;
    nn::LayerNormCache<T> self_ln;
    nn::Matrix<T> self_in;
    nn::AttentionCache<T> self_attn;
    nn::Matrix<T> x_mid;
    nn::LayerNormCache<T> cross_ln;
    nn::Matrix<T> cross_in;
    nn::AttentionCache<T> cross_attn;
    nn::Matrix<T> x_mid2;
    nn::LayerNormCache<T> ff_ln;
    nn::Matrix<T> ff_x;
    nn::Matrix<T> ff_pre;
    nn::Matrix<T> ff_act;
  };

  struct Cache {
    std::vector<std::int32_t> ids;
    nn::Matrix<T> memory_in;
    nn::Matrix<T> memory;
    std::vector<LayerCache> layers;
    nn::LayerNormCache<T> final_ln;
    nn::Matrix<T> pre_final;
  };

  void check_inputs(const nn::Matrix<T>& memory, const std::vector<std::int32_t>& ids) const {
    if (memory.cols() != cfg_.memory_dim) {
      throw InvalidArgument("memory width " + std::to_string(memory.cols()) + " does not match decoder memory dim " +
                            std::to_string(cfg_.memory_dim));
    }
    if (memory.rows() < 1) throw InvalidArgument("empty memory");
    if (!memory.allFinite()) throw NumericError("memory contains non-finite values");
    if (ids.empty() || ids.front() != BpeTokenizer::kBos) throw InvalidArgument("shifted ids must start with BOS");
    if (static_cast<int>(ids.size()) > cfg_.max_output_len) {
      throw InvalidArgument("sequence length " + std::to_string(ids.size()) + " exceeds max_output_len " +
                            std::to_string(cfg_.max_output_len));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= cfg_.vocab_size) throw IdOutOfRange(i, ids[i], static_cast<std::size_t>(cfg_.vocab_size));
    }
  }

  nn::Matrix<T> run_layers(const nn::Matrix<T>& mem, const std::vector<std::int32_t>& ids, Cache* cache) const {
    const auto n = static_cast<Eigen::Index>(ids.size());
    nn::Matrix<T> x(n, cfg_.model_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      x.row(i) = token_embedding_.value.row(ids[static_cast<std::size_t>(i)]) + position_embedding_.value.row(i);
    }
    for (const auto& l : layers_) {
      LayerCache* c = nullptr;
      if (cache) {
        cache->layers.emplace_back();
        c = &cache->layers.back();
        c->x_in = x;
      }
      nn::Matrix<T> a = l.self_norm.forward(x, c ? &c->self_ln : nullptr);
      nn::Matrix<T> x1 = x + l.self_attention.forward(a, a, true, c ? &c->self_attn : nullptr);
      if (c) c->self_in = std::move(a), c->x_mid = x1;
      nn::Matrix<T> b = l.cross_norm.forward(x1, c ? &c->cross_ln : nullptr);
      nn::Matrix<T> x2 = x1 + l.cross_attention.forward(b, mem, false, c ? &c->cross_attn : nullptr);
      if (c) c->cross_in = std::move(b), c->x_mid2 = x2;
      nn::Matrix<T> f = l.ff_norm.forward(x2, c ? &c->ff_ln : nullptr);
      nn::Matrix<T> pre = l.ff_in.forward(f);
      nn::Matrix<T> act = nn::gelu(pre);
      x = x2 + l.ff_out.forward(act);
      if (c) {
        c->ff_x = std::move(f);
        c->ff_pre = std::move(pre);
        c->ff_act = std::move(act);
      }
    }
    return x;
  }

  nn::Matrix<T> hidden(const nn::Matrix<T>& memory, const std::vector<std::int32_t>& ids, Cache* cache) const {
    check_inputs(memory, ids);
    nn::Matrix<T> mem = memory_proj_.forward(memory);
    nn::Matrix<T> x = run_layers(mem, ids, cache);
    nn::Matrix<T> h = final_norm_.forward(x, cache ? &cache->final_ln : nullptr);
    if (cache) {
      cache->ids = ids;
      cache->memory_in = memory;
      cache->memory = std::move(mem);
      cache->pre_final = std::move(x);
    }
    return h;
  }

  void backward(Cache& c, const nn::Matrix<T>& dh) {
    nn::Matrix<T> dx = final_norm_.backward(c.final_ln, dh);
    nn::Matrix<T> dmem = nn::Matrix<T>::Zero(c.memory.rows(), c.memory.cols());
    for (std::size_t li = layers_.size(); li-- > 0;) {
      auto& l = layers_[li];
      auto& lc = c.layers[li];
      // x = x2 + ff_out(gelu(ff_in(ln(x2))))
      nn::Matrix<T> d = l.ff_out.backward(lc.ff_act, dx);
      d = nn::gelu_backward(lc.ff_pre, d);
      d = l.ff_in.backward(lc.ff_x, d);
      nn::Matrix<T> dx2 = dx + l.ff_norm.backward(lc.ff_ln, d);
      // x2 = x1 + cross(ln(x1), mem)
      auto [dq, dkv] = l.cross_attention.backward(lc.cross_in, c.memory, lc.cross_attn, dx2);
      dmem += dkv;
      nn::Matrix<T> dx1 = dx2 + l.cross_norm.backward(lc.cross_ln, dq);
      // x1 = x + self(ln(x))
      auto [sq, skv] = l.self_attention.backward(lc.self_in, lc.self_in, lc.self_attn, dx1);
      sq += skv;
      dx = dx1 + l.self_norm.backward(lc.self_ln, sq);
    }
    memory_proj_.backward(c.memory_in, dmem);
    for (std::size_t i = 0; i < c.ids.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      token_embedding_.grad.row(c.ids[i]) += dx.row(row);
      position_embedding_.grad.row(row) += dx.row(row);
    }
  }

  StepResult run_batch(std::span<const Seq2SeqExample> batch, bool train) {
    std::vector<Cache> caches(train ? batch.size() : 0);
    std::vector<nn::Matrix<T>> hs;
    std::vector<std::int32_t> targets;
    Eigen::Index rows = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& e = batch[b];
      auto [in, out] = teacher_forcing(*e.ids);
      hs.push_back(hidden(e.cte->values.template cast<T>(), in, train ? &caches[b] : nullptr));
      rows += hs.back().rows();
      targets.insert(targets.end(), out.begin(), out.end());
    }
    nn::Matrix<T> h(rows, cfg_.model_dim);
    Eigen::Index r = 0;
    for (const auto& m : hs) {
      h.middleRows(r, m.rows()) = m;
      r += m.rows();
    }
    const auto logits = output_.forward(h);
    auto ce = nn::softmax_cross_entropy<T>(logits, targets, T(1) / static_cast<T>(targets.size()));
    if (train) {
      const nn::Matrix<T> dh = output_.backward(h, ce.dlogits);
      r = 0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto n = hs[b].rows();
        backward(caches[b], dh.middleRows(r, n));
        r += n;
      }
    }
    return {ce.loss_sum, ce.correct, targets.size()};
  }

  DecoderConfig cfg_;
  std::uint64_t seed_;
  nn::Parameter<T> token_embedding_;
  nn::Parameter<T> position_embedding_;
  nn::Linear<T> memory_proj_;
  std::vector<Layer> layers_;
  nn::LayerNorm<T> final_norm_;
  nn::Linear<T> output_;
};

template <typename T = float>
DecoderModel<T> init_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
  return DecoderModel<T>(cfg, seed);
}

/// The desk-scale decoder geometry.
inline DecoderConfig desk_decoder_config(int memory_dim, int vocab_size) {
  return {4, 8, 256, 1024, memory_dim, vocab_size, 64};
}

/// A reference-scale geometry for a 768-wide encoder, about 95M parameters.
inline DecoderConfig reference_decoder_config() { return {6, 12, 768, 3072, 768, 24576, 512}; }

}  // namespace cteinv
