#pragma once

// Binary checkpoint format:
//   magic "CLQ1" | format version u32 LE | config hash (32 bytes) |
//   tensor count u32 | per tensor: name length u16 + UTF-8 name, rank u8,
//   dims u32 x rank, data as IEEE-754 32-bit LE.
// Tensor names are "agent<i>/<tensor>"; reading back is bit-identical.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "collaq/nnet.hpp"

namespace collaq {

using ConfigHash = std::array<unsigned char, 32>;

inline ConfigHash sha256_bytes(const std::string& data) {
  ConfigHash out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("sha256_bytes: digest failure");
  }
  return out;
}

inline std::string hash_hex(const ConfigHash& hash) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (unsigned char b : hash) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ckptdetail {

inline constexpr char kMagic[4] = {'C', 'L', 'Q', '1'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
inline void write_le(std::ostream& out, T value) {
  // Little-endian host assumed; the on-disk layout is LE by definition.
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
inline T read_le(std::istream& in) {
  char bytes[sizeof(T)];
  in.read(bytes, sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace ckptdetail

inline void write_checkpoint(const std::vector<ParamStore<float>>& agents,
                             const ConfigHash& hash, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("write_checkpoint: cannot open " + path);
  out.write(ckptdetail::kMagic, 4);
  ckptdetail::write_le<std::uint32_t>(out, ckptdetail::kVersion);
  out.write(reinterpret_cast<const char*>(hash.data()), hash.size());

  std::uint32_t tensor_count = 0;
  for (const auto& store : agents) tensor_count += static_cast<std::uint32_t>(store.tensors().size());
  ckptdetail::write_le<std::uint32_t>(out, tensor_count);

  for (std::size_t agent = 0; agent < agents.size(); ++agent) {
    for (const Tensor<float>& t : agents[agent].tensors()) {
      const std::string name = "agent" + std::to_string(agent) + "/" + t.name;
      ckptdetail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      ckptdetail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
      for (int dim : t.shape) ckptdetail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
      out.write(reinterpret_cast<const char*>(t.value.data()),
                static_cast<std::streamsize>(sizeof(float) * t.value.size()));
    }
  }
  if (!out) throw CheckpointError("write_checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  ConfigHash hash{};
  std::vector<ParamStore<float>> agents;
};

/// Reads a checkpoint back. When `expected_hash` is given it must match the
/// stored hash unless `force` is set. No partial state escapes on failure.
inline LoadedCheckpoint read_checkpoint(const std::string& path,
                                        const ConfigHash* expected_hash = nullptr,
                                        bool force = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("read_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, ckptdetail::kMagic, 4) != 0)
    throw CheckpointError("read_checkpoint: bad magic in " + path);
  const std::uint32_t version = ckptdetail::read_le<std::uint32_t>(in);
  if (version != ckptdetail::kVersion)
    throw CheckpointError("read_checkpoint: unsupported format version " +
                          std::to_string(version));
  LoadedCheckpoint loaded;
  in.read(reinterpret_cast<char*>(loaded.hash.data()), loaded.hash.size());
  if (!in) throw CheckpointError("read_checkpoint: checkpoint truncated");
  if (expected_hash && loaded.hash != *expected_hash && !force)
    throw CheckpointError(
        "read_checkpoint: config hash mismatch (stored " + hash_hex(loaded.hash) +
        ", expected " + hash_hex(*expected_hash) + "); pass --force to override");

  const std::uint32_t tensor_count = ckptdetail::read_le<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < tensor_count; ++t) {
    const std::uint16_t name_len = ckptdetail::read_le<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("read_checkpoint: checkpoint truncated");
    const std::size_t slash = name.find('/');
    if (slash == std::string::npos || name.rfind("agent", 0) != 0)
      throw CheckpointError("read_checkpoint: malformed tensor name '" + name + "'");
    const int agent = std::stoi(name.substr(5, slash - 5));
    if (agent < 0 || agent > 4096)
      throw CheckpointError("read_checkpoint: implausible agent index in '" + name + "'");
    const std::string tensor_name = name.substr(slash + 1);

    const std::uint8_t rank = ckptdetail::read_le<std::uint8_t>(in);
    if (rank < 1 || rank > 2)
      throw CheckpointError("read_checkpoint: unsupported tensor rank " + std::to_string(rank));
    std::uint32_t rows = ckptdetail::read_le<std::uint32_t>(in);
    std::uint32_t cols = rank == 2 ? ckptdetail::read_le<std::uint32_t>(in) : 1;
    if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1u << 28))
      throw CheckpointError("read_checkpoint: implausible tensor shape in '" + name + "'");

    while (static_cast<std::size_t>(agent) >= loaded.agents.size()) loaded.agents.emplace_back();
    Mat<float>& value = loaded.agents[agent].add(tensor_name, static_cast<int>(rows),
                                                 static_cast<int>(cols), rank == 1);
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(sizeof(float) * value.size()));
    if (!in) throw CheckpointError("read_checkpoint: checkpoint truncated");
  }
  return loaded;
}

}  // namespace collaq
