#pragma once

// CTE shard: the published derived text format.
//
//   header  "CTE1" | version u32 | d u32 | count u64 | encoder digest [32]
//   record  L u32 | L*d float32, row-major
//   footer  "ETC1" | CRC-32 of every byte preceding the footer
//
// All integers and reals little-endian. A shard without a valid footer is
// incomplete and rejected by the reader.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/corpus.hpp"
#include "cteinv/encoder.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/hashing.hpp"

namespace cteinv {

inline constexpr char kShardMagic[4] = {'C', 'T', 'E', '1'};
inline constexpr char kShardFooterMagic[4] = {'E', 'T', 'C', '1'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderSize = 4 + 4 + 4 + 8 + 32;

struct ShardHeader {
  std::uint32_t version = kShardVersion;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  Digest encoder_digest{};
};

struct ShardManifest {
  std::string shard_file;
  std::string split_name;
  std::string corpus_checksum;
  std::uint64_t sample_count = 0;
  std::uint32_t dim = 0;
  std::string encoder_model_id;
  std::string encoder_digest;  // hex
  std::string layer = "final";
  bool special_tokens_excluded = true;
  std::uint64_t max_seq_len = 0;
  std::vector<std::uint64_t> truncated;  // record indices cut to the length limit
  std::string shard_sha256;

  nlohmann::json to_json() const {
    return {{"shard_file", shard_file},
            {"split_name", split_name},
            {"corpus_checksum", corpus_checksum},
            {"sample_count", sample_count},
            {"dim", dim},
            {"encoder_model_id", encoder_model_id},
            {"encoder_digest", encoder_digest},
            {"layer", layer},
            {"special_tokens_excluded", special_tokens_excluded},
            {"max_seq_len", max_seq_len},
            {"truncated", truncated},
            {"shard_sha256", shard_sha256}};
  }

  static ShardManifest from_json(const nlohmann::json& j) {
    ShardManifest m;
    m.shard_file = j.at("shard_file").get<std::string>();
    m.split_name = j.value("split_name", "");
    m.corpus_checksum = j.value("corpus_checksum", "");
    m.sample_count = j.at("sample_count").get<std::uint64_t>();
    m.dim = j.at("dim").get<std::uint32_t>();
    m.encoder_model_id = j.value("encoder_model_id", "");
    m.encoder_digest = j.at("encoder_digest").get<std::string>();
    m.layer = j.value("layer", "final");
    m.special_tokens_excluded = j.value("special_tokens_excluded", true);
    m.max_seq_len = j.value("max_seq_len", std::uint64_t{0});
    m.truncated = j.value("truncated", std::vector<std::uint64_t>{});
    m.shard_sha256 = j.value("shard_sha256", "");
    return m;
  }
};

inline std::filesystem::path manifest_path_for(const std::filesystem::path& shard) {
  auto p = shard;
  p += ".manifest.json";
  return p;
}

namespace detail {

class CrcWriter {
 public:
  explicit CrcWriter(std::ofstream& os) : os_(os) {}
  void write(const void* data, std::size_t n) {
    crc_.update(data, n);
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write(b, 8);
  }
  void f32(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      write(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) u32(std::bit_cast<std::uint32_t>(data[i]));
    }
  }
  std::uint32_t crc() const { return crc_.value(); }

 private:
  std::ofstream& os_;
  Crc32 crc_;
};

inline std::uint32_t le_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint64_t le_u64(const unsigned char* p) {
  return static_cast<std::uint64_t>(le_u32(p)) | static_cast<std::uint64_t>(le_u32(p + 4)) << 32;
}

}  // namespace detail

/// Sequential shard writer. The footer is only written by finish(); a
/// writer destroyed early leaves an invalid shard behind.
class ShardWriter {
 public:
  ShardWriter(const std::filesystem::path& path, std::uint32_t dim, std::uint64_t count, const Digest& digest)
      : os_(path, std::ios::binary | std::ios::trunc), out_(os_), header_{kShardVersion, dim, count, digest} {
    if (!os_) throw IoError("cannot open shard for writing: " + path.string());
    out_.write(kShardMagic, 4);
    out_.u32(header_.version);
    out_.u32(dim);
    out_.u64(count);
    out_.write(digest.data(), digest.size());
  }

  void write(const CteSequence& cte) {
    if (cte.dim() != header_.dim) throw InvalidArgument("record dim does not match shard dim");
    if (cte.length() == 0) throw InvalidArgument("empty CTE record");
    if (written_ == header_.count) throw InvalidArgument("more records than declared in the shard header");
    out_.u32(static_cast<std::uint32_t>(cte.length()));
    out_.f32(cte.values.data(), static_cast<std::size_t>(cte.values.size()));
    ++written_;
  }

  void finish() {
    if (written_ != header_.count) {
      throw InvalidArgument("shard declares " + std::to_string(header_.count) + " records but " +
                            std::to_string(written_) + " were written");
    }
    const std::uint32_t crc = out_.crc();
    os_.write(kShardFooterMagic, 4);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(crc >> (8 * i));
    os_.write(reinterpret_cast<const char*>(b), 4);
    os_.flush();
    if (!os_) throw IoError("shard write failed");
    os_.close();
  }

 private:
  std::ofstream os_;
  detail::CrcWriter out_;
  ShardHeader header_;
  std::uint64_t written_ = 0;
};

/// Reads and validates a whole shard (magic, version, CRC footer, record
/// count and shape) into memory.
struct Shard {
  ShardHeader header;
  std::vector<CteSequence> records;

  static Shard read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw IoError("cannot open shard " + path.string());
    const auto size = static_cast<std::size_t>(is.tellg());
    if (size < kShardHeaderSize + 8) throw FormatError("shard too small: " + path.string());
    std::vector<unsigned char> buf(size);
    is.seekg(0);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size))) {
      throw IoError("read failed for " + path.string());
    }
    if (std::memcmp(buf.data(), kShardMagic, 4) != 0) throw FormatError("bad shard magic in " + path.string());
    const std::size_t body = size - 8;
    if (std::memcmp(buf.data() + body, kShardFooterMagic, 4) != 0) {
      throw FormatError("shard " + path.string() + " has no footer (incomplete write)");
    }
    Crc32 crc;
    crc.update(buf.data(), body);
    if (crc.value() != detail::le_u32(buf.data() + body + 4)) {
      throw FormatError("shard " + path.string() + " fails its CRC check");
    }
    Shard s;
    s.header.version = detail::le_u32(buf.data() + 4);
    if (s.header.version != kShardVersion) {
      throw FormatError("unsupported shard version " + std::to_string(s.header.version));
    }
    s.header.dim = detail::le_u32(buf.data() + 8);
    s.header.count = detail::le_u64(buf.data() + 12);
    std::memcpy(s.header.encoder_digest.data(), buf.data() + 20, 32);
    std::size_t off = kShardHeaderSize;
    s.records.reserve(s.header.count);
    for (std::uint64_t r = 0; r < s.header.count; ++r) {
      if (off + 4 > body) throw FormatError("shard truncated at record " + std::to_string(r));
      const std::uint32_t len = detail::le_u32(buf.data() + off);
      off += 4;
      const std::size_t n = static_cast<std::size_t>(len) * s.header.dim;
      if (len == 0 || off + n * 4 > body) throw FormatError("bad record " + std::to_string(r));
      CteSequence cte{Matrixf(len, s.header.dim)};
      std::memcpy(cte.values.data(), buf.data() + off, n * 4);
      if constexpr (std::endian::native != std::endian::little) {
        for (std::size_t i = 0; i < n; ++i) {
          cte.values.data()[i] =
              std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(cte.values.data()[i])));
        }
      }
      if (!cte.finite()) throw FormatError("non-finite values in record " + std::to_string(r));
      off += n * 4;
      s.records.push_back(std::move(cte));
    }
    if (off != body) throw FormatError("trailing bytes before shard footer");
    return s;
  }
};

inline ShardManifest read_shard_manifest(const std::filesystem::path& shard) {
  std::ifstream in(manifest_path_for(shard));
  if (!in) throw IoError("missing shard manifest for " + shard.string());
  return ShardManifest::from_json(nlohmann::json::parse(in));
}

/// Encodes every sample of a split into a shard, in split order, and writes
/// the manifest sidecar. Encoding may fan out over `workers` threads; the
/// single writer consumes results in order.
inline ShardManifest batch_encode(const EncoderPipeline& pipeline, const CorpusSplit& split,
                                  const std::filesystem::path& out, unsigned workers = 1) {
  if (split.samples.empty()) throw EmptyCorpusError("batch_encode: split '" + split.name + "' is empty");
  const auto h = pipeline.handle();
  ShardManifest m;
  m.shard_file = out.filename().string();
  m.split_name = split.name;
  m.corpus_checksum = split.source_checksum;
  m.sample_count = split.sample_count();
  m.dim = static_cast<std::uint32_t>(h.dim);
  m.encoder_model_id = h.model_id;
  m.encoder_digest = to_hex(h.parameter_digest);
  m.max_seq_len = h.max_seq_len;

  auto tmp = out;
  tmp += ".partial";
  {
    ShardWriter writer(tmp, m.dim, m.sample_count, h.parameter_digest);
    const std::size_t chunk = 256;
    workers = std::max(1u, workers);
    std::vector<CteSequence> buffer;
    std::vector<char> cut;
    for (std::size_t begin = 0; begin < split.samples.size(); begin += chunk) {
      const std::size_t end = std::min(split.samples.size(), begin + chunk);
      buffer.assign(end - begin, CteSequence{});
      cut.assign(end - begin, 0);
      auto work = [&](unsigned lane) {
        for (std::size_t i = begin + lane; i < end; i += workers) {
          auto [a, truncated] = pipeline.tokenize_truncating(split.samples[i].text);
          buffer[i - begin] = pipeline.encode_ids(a.vocab_ids);
          cut[i - begin] = truncated ? 1 : 0;
        }
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::jthread> lanes;
        for (unsigned w = 0; w < workers; ++w) lanes.emplace_back(work, w);
      }
      for (std::size_t i = begin; i < end; ++i) {
        writer.write(buffer[i - begin]);
        if (cut[i - begin]) m.truncated.push_back(i);
      }
    }
    writer.finish();
  }
  std::filesystem::rename(tmp, out);
  m.shard_sha256 = to_hex(sha256_file(out.string()));
  std::ofstream mo(manifest_path_for(out));
  if (!mo) throw IoError("cannot write shard manifest");
  mo << m.to_json().dump(2) << '\n';
  return m;
}

}  // namespace cteinv
