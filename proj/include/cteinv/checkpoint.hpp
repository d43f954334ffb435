#pragma once

// Binary checkpoint container: magic, length-prefixed JSON metadata, then
// raw little-endian tensors in the order the metadata lists them. Writes go
// to a temporary file that is renamed into place.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "cteinv/encoder.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/nn.hpp"

namespace cteinv {

inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'E', 'C', 'K', 'P', 'T', '1'};

template <typename T>
struct TensorGroup {
  std::string name;
  std::vector<nn::Matrix<T>*> tensors;
};

namespace detail {

template <typename T>
void write_tensor(std::ostream& os, const nn::Matrix<T>& m) {
  if constexpr (std::is_same_v<T, float>) {
    write_f32(os, m.data(), static_cast<std::size_t>(m.size()));
  } else {
    static_assert(std::endian::native == std::endian::little, "double checkpoints need a little-endian host");
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
  }
}

template <typename T>
void read_tensor(std::istream& is, nn::Matrix<T>& m) {
  if constexpr (std::is_same_v<T, float>) {
    read_f32(is, m.data(), static_cast<std::size_t>(m.size()));
  } else {
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)))) {
      throw FormatError("truncated tensor data");
    }
  }
}

}  // namespace detail

template <typename T>
void write_checkpoint(const std::filesystem::path& path, nlohmann::json meta, const std::vector<TensorGroup<T>>& groups) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto* t : g.tensors) shapes.push_back({t->rows(), t->cols()});
    layout.push_back({{"group", g.name}, {"shapes", shapes}});
  }
  meta["tensor_layout"] = layout;
  meta["dtype"] = std::is_same_v<T, float> ? "float32" : "float64";
  const std::string hs = meta.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kCheckpointMagic, 8);
    detail::write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& g : groups) {
      for (const auto* t : g.tensors) detail::write_tensor(os, *t);
    }
    os.flush();
    if (!os) throw IoError("checkpoint write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const auto n = detail::read_u64(is);
  std::string hs(n, '\0');
  if (!is.read(hs.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated checkpoint header");
  return nlohmann::json::parse(hs);
}

/// Fills the given groups from a checkpoint. Groups absent from the file are
/// left untouched and reported as false in the result.
template <typename T>
std::vector<bool> read_checkpoint_tensors(const std::filesystem::path& path, const std::vector<TensorGroup<T>>& groups) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  is.seekg(8);
  const auto n = detail::read_u64(is);
  std::string hs(n, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(n));
  const auto meta = nlohmann::json::parse(hs);
  if (meta.at("dtype") != (std::is_same_v<T, float> ? "float32" : "float64")) {
    throw FormatError("checkpoint dtype mismatch");
  }
  std::vector<bool> found(groups.size(), false);
  for (const auto& entry : meta.at("tensor_layout")) {
    const auto name = entry.at("group").get<std::string>();
    const auto& shapes = entry.at("shapes");
    std::size_t gi = 0;
    while (gi < groups.size() && groups[gi].name != name) ++gi;
    if (gi == groups.size()) {
      // Skip an unrequested group.
      for (const auto& s : shapes) {
        const auto bytes = s.at(0).get<std::int64_t>() * s.at(1).get<std::int64_t>() * static_cast<std::int64_t>(sizeof(T));
        is.seekg(bytes, std::ios::cur);
      }
      continue;
    }
    const auto& g = groups[gi];
    if (shapes.size() != g.tensors.size()) throw FormatError("tensor count mismatch in group " + name);
    for (std::size_t i = 0; i < g.tensors.size(); ++i) {
      auto* t = g.tensors[i];
      if (shapes[i].at(0).get<Eigen::Index>() != t->rows() || shapes[i].at(1).get<Eigen::Index>() != t->cols()) {
        throw FormatError("tensor shape mismatch in group " + name);
      }
      detail::read_tensor(is, *t);
    }
    found[gi] = true;
  }
  return found;
}

template <typename T>
std::vector<nn::Matrix<T>*> values_of(const nn::ParamList<T>& ps) {
  std::vector<nn::Matrix<T>*> out;
  for (auto* p : ps) out.push_back(&p->value);
  return out;
}

template <typename T>
std::vector<nn::Matrix<T>*> pointers_to(std::vector<nn::Matrix<T>>& ms) {
  std::vector<nn::Matrix<T>*> out;
  for (auto& m : ms) out.push_back(&m);
  return out;
}

}  // namespace cteinv
