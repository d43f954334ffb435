#pragma once

// The frozen text -> CTE pipeline: word-piece tokenizer plus a BERT-style
// post-LN transformer encoder evaluated in single precision. CTEs are the
// final-layer hidden states with the [CLS]/[SEP] rows removed.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/errors.hpp"
#include "cteinv/hashing.hpp"
#include "cteinv/nn.hpp"
#include "cteinv/random.hpp"
#include "cteinv/threat_model.hpp"
#include "cteinv/wordpiece.hpp"

namespace cteinv {

using Matrixf = nn::Matrix<float>;

struct EncoderConfig {
  std::string model_id = "mini-encoder";
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int max_seq_len = 64;  // including [CLS] and [SEP]
  float ln_eps = 1e-12f;

  nlohmann::json to_json() const {
    return {{"model_id", model_id}, {"dim", dim},           {"layers", layers}, {"heads", heads},
            {"ff_dim", ff_dim},     {"max_seq_len", max_seq_len}, {"ln_eps", ln_eps}};
  }
  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.model_id = j.at("model_id").get<std::string>();
    c.dim = j.at("dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ff_dim = j.at("ff_dim").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.ln_eps = j.at("ln_eps").get<float>();
    return c;
  }
};

/// The reference base-size uncased encoder geometry.
inline constexpr int kReferenceDim = 768;
inline constexpr int kReferenceVocab = 30522;

struct EncoderHandle {
  std::string model_id;
  Digest parameter_digest{};
  std::size_t dim = 0;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 0;
};

struct CteSequence {
  Matrixf values;  // L x d, row-major

  std::size_t length() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
  bool finite() const { return values.allFinite(); }
};

class TransformerEncoder {
 public:
  struct Layer {
    nn::MultiHeadAttention<float> attention;
    nn::LayerNorm<float> attention_norm;
    nn::Linear<float> ff_in, ff_out;
    nn::LayerNorm<float> output_norm;
  };

  TransformerEncoder(const EncoderConfig& cfg, std::size_t vocab_size)
      : cfg_(cfg),
        token_embedding_("embeddings.token", static_cast<Eigen::Index>(vocab_size), cfg.dim),
        position_embedding_("embeddings.position", cfg.max_seq_len, cfg.dim),
        embedding_norm_("embeddings.norm", cfg.dim, cfg.ln_eps) {
    if (cfg.dim < 1 || cfg.layers < 0 || cfg.ff_dim < 1 || cfg.max_seq_len < 3) {
      throw InvalidArgument("invalid encoder configuration");
    }
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string p = "layer" + std::to_string(i);
      layers_.push_back(Layer{nn::MultiHeadAttention<float>(p + ".attention", cfg.dim, cfg.heads),
                              nn::LayerNorm<float>(p + ".attention_norm", cfg.dim, cfg.ln_eps),
                              nn::Linear<float>(p + ".ff_in", cfg.dim, cfg.ff_dim),
                              nn::Linear<float>(p + ".ff_out", cfg.ff_dim, cfg.dim),
                              nn::LayerNorm<float>(p + ".output_norm", cfg.dim, cfg.ln_eps)});
    }
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    nn::fill_normal(token_embedding_.value, rng, 1.0);
    nn::fill_normal(position_embedding_.value, rng, 1.0);
    for (auto& l : layers_) {
      l.attention.init(rng);
      l.ff_in.init(rng);
      l.ff_out.init(rng);
    }
  }

  /// Hidden states of the last layer for a full id sequence (markers included).
  Matrixf forward(const std::vector<TokenId>& ids) const {
    const auto n = static_cast<Eigen::Index>(ids.size());
    Matrixf x(n, cfg_.dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      x.row(i) = token_embedding_.value.row(ids[static_cast<std::size_t>(i)]) + position_embedding_.value.row(i);
    }
    x = embedding_norm_.forward(x);
    for (const auto& l : layers_) {
      x = l.attention_norm.forward(x + l.attention.forward(x, x, false));
      x = l.output_norm.forward(x + l.ff_out.forward(nn::gelu(l.ff_in.forward(x))));
    }
    return x;
  }

  /// Fixed-order view of every parameter tensor.
  std::vector<const nn::Parameter<float>*> parameters() const {
    auto& self = const_cast<TransformerEncoder&>(*this);
    nn::ParamList<float> ps{&self.token_embedding_, &self.position_embedding_};
    self.embedding_norm_.collect(ps);
    for (auto& l : self.layers_) {
      l.attention.collect(ps);
      l.attention_norm.collect(ps);
      l.ff_in.collect(ps);
      l.ff_out.collect(ps);
      l.output_norm.collect(ps);
    }
    return {ps.begin(), ps.end()};
  }

  nn::ParamList<float> mutable_parameters() {
    auto cps = parameters();
    nn::ParamList<float> out;
    for (auto* p : cps) out.push_back(const_cast<nn::Parameter<float>*>(p));
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  nn::Parameter<float> token_embedding_;
  nn::Parameter<float> position_embedding_;
  nn::LayerNorm<float> embedding_norm_;
  std::vector<Layer> layers_;
};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = __builtin_bswap32(std::bit_cast<std::uint32_t>(data[i]));
      os.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

inline void read_f32(std::istream& is, float* data, std::size_t n) {
  if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw FormatError("truncated tensor data");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      data[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(data[i])));
    }
  }
}

}  // namespace detail

/// Tokenizer + frozen encoder. Read-only after construction; safe to share
/// across threads.
class EncoderPipeline {
 public:
  static constexpr char kArtifactMagic[8] = {'C', 'T', 'E', 'E', 'N', 'C', '0', '1'};

  EncoderPipeline(EncoderConfig cfg, WordPieceTokenizer tokenizer, std::uint64_t init_seed)
      : tokenizer_(std::move(tokenizer)),
        encoder_(std::make_unique<TransformerEncoder>(cfg, tokenizer_.vocab_size())) {
    encoder_->init(init_seed);
    digest_ = compute_digest();
  }

  const WordPieceTokenizer& tokenizer() const { return tokenizer_; }
  const TransformerEncoder& encoder() const { return *encoder_; }
  const EncoderConfig& config() const { return encoder_->config(); }

  EncoderHandle handle() const {
    return {config().model_id, digest_, static_cast<std::size_t>(config().dim), tokenizer_.vocab_size(),
            static_cast<std::size_t>(config().max_seq_len)};
  }

  /// Content-token budget: max_seq_len minus the two sequence markers.
  std::size_t max_content_tokens() const { return static_cast<std::size_t>(config().max_seq_len) - 2; }

  /// SHA-256 over configuration, vocabulary and every parameter byte,
  /// recomputed from the live tensors.
  Digest compute_digest() const {
    Sha256 h;
    h.update(config().to_json().dump());
    const auto vd = tokenizer_.digest();
    h.update(vd.data(), vd.size());
    for (const auto* p : encoder_->parameters()) {
      h.update(p->name);
      h.update(p->value.data(), p->size() * sizeof(float));
    }
    return h.finish();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write encoder artifact " + path.string());
    nlohmann::json header{{"config", config().to_json()}, {"vocab", tokenizer_.vocab()}};
    const std::string hs = header.dump();
    os.write(kArtifactMagic, 8);
    detail::write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* p : encoder_->parameters()) detail::write_f32(os, p->value.data(), p->size());
    if (!os) throw IoError("write failed for " + path.string());
  }

  static EncoderPipeline load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read encoder artifact " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kArtifactMagic, 8) != 0) {
      throw FormatError(path.string() + " is not an encoder artifact");
    }
    const auto n = detail::read_u64(is);
    std::string hs(n, '\0');
    if (!is.read(hs.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated encoder header");
    const auto header = nlohmann::json::parse(hs);
    EncoderPipeline p(EncoderConfig::from_json(header.at("config")),
                      WordPieceTokenizer(header.at("vocab").get<std::vector<std::string>>()), 0);
    for (auto* t : p.encoder_->mutable_parameters()) detail::read_f32(is, t->value.data(), t->size());
    p.digest_ = p.compute_digest();
    return p;
  }

  // -- tok() / tok^-1 / enc(tok()) ------------------------------------------

  TokenAlignment tokenize(std::string_view text) const {
    if (text::trim(text).empty()) throw InvalidArgument("tokenize: empty text");
    auto a = tokenizer_.tokenize(text);
    if (a.size() == 0) throw InvalidArgument("tokenize: text has no content tokens");
    if (a.size() > max_content_tokens()) throw SequenceTooLong(a.size(), max_content_tokens());
    return a;
  }

  /// As tokenize, but cuts over-length input to the content budget instead
  /// of failing. Returns whether truncation happened.
  std::pair<TokenAlignment, bool> tokenize_truncating(std::string_view text) const {
    if (text::trim(text).empty()) throw InvalidArgument("tokenize: empty text");
    auto a = tokenizer_.tokenize(text);
    if (a.size() == 0) throw InvalidArgument("tokenize: text has no content tokens");
    const bool cut = a.size() > max_content_tokens();
    if (cut) {
      a.tokens.resize(max_content_tokens());
      a.vocab_ids.resize(max_content_tokens());
    }
    return {std::move(a), cut};
  }

  std::string detokenize(const std::vector<TokenId>& ids) const { return tokenizer_.detokenize(ids); }

  CteSequence encode_ids(const std::vector<TokenId>& content_ids) const {
    if (content_ids.empty()) throw InvalidArgument("encode: empty id sequence");
    if (content_ids.size() > max_content_tokens()) throw SequenceTooLong(content_ids.size(), max_content_tokens());
    std::vector<TokenId> ids;
    ids.reserve(content_ids.size() + 2);
    ids.push_back(tokenizer_.cls_id());
    for (std::size_t i = 0; i < content_ids.size(); ++i) {
      const auto id = content_ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= tokenizer_.vocab_size()) {
        throw IdOutOfRange(i, id, tokenizer_.vocab_size());
      }
      ids.push_back(id);
    }
    ids.push_back(tokenizer_.sep_id());
    const Matrixf hidden = encoder_->forward(ids);
    CteSequence out{hidden.middleRows(1, hidden.rows() - 2)};
    if (!out.finite()) throw NumericError("encoder produced non-finite values");
    return out;
  }

  CteSequence encode(std::string_view text) const { return encode_ids(tokenize(text).vocab_ids); }

 private:
  WordPieceTokenizer tokenizer_;
  std::unique_ptr<TransformerEncoder> encoder_;
  Digest digest_{};
};

/// Builds the miniature desk-scale encoder: vocabulary drawn from a
/// "pretraining" text collection and seeded random weights.
inline EncoderPipeline make_miniature_encoder(const std::vector<std::string>& pretraining_texts,
                                              std::size_t vocab_size, EncoderConfig cfg, std::uint64_t seed) {
  return EncoderPipeline(cfg, build_wordpiece_vocab(pretraining_texts, vocab_size), seed);
}

/// Capability-gated access to a pipeline. Each accessor throws
/// CapabilityError when the scenario does not grant it.
class GatedPipeline {
 public:
  GatedPipeline(const EncoderPipeline& pipeline, ScenarioCapability cap) : p_(pipeline), cap_(cap) {}

  const ScenarioCapability& capability() const { return cap_; }

  TokenAlignment tokenize(std::string_view text) const {
    if (!cap_.has_tokenizer) throw CapabilityError("tokenizer not available in scenario " + scenario_tag(cap_.scenario));
    return p_.tokenize(text);
  }

  std::string detokenize(const std::vector<TokenId>& ids) const {
    if (!cap_.has_detokenizer) {
      throw CapabilityError("detokenizer not available in scenario " + scenario_tag(cap_.scenario));
    }
    return p_.detokenize(ids);
  }

  /// Opaque text -> CTE query; counts against the query budget.
  CteSequence encode(std::string_view text) const {
    if (!cap_.can_query_encoder) {
      throw CapabilityError("encoder queries not available in scenario " + scenario_tag(cap_.scenario));
    }
    if (cap_.query_budget && queries_ >= *cap_.query_budget) {
      throw CapabilityError("encoder query budget of " + std::to_string(*cap_.query_budget) + " exhausted");
    }
    ++queries_;
    return p_.encode(text);
  }

  const TransformerEncoder& parameters() const {
    if (!cap_.has_encoder_params) {
      throw CapabilityError("encoder parameters not available in scenario " + scenario_tag(cap_.scenario));
    }
    return p_.encoder();
  }

  EncoderHandle handle() const { return p_.handle(); }
  std::uint64_t queries_used() const { return queries_; }

 private:
  const EncoderPipeline& p_;
  ScenarioCapability cap_;
  mutable std::uint64_t queries_ = 0;
};

}  // namespace cteinv
