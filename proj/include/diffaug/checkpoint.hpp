#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffaug/nn.hpp"
#include "diffaug/tensor.hpp"
#include "json.hpp"

namespace diffaug {

inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'U', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Self-describing archive: magic, version, a JSON header (kind, metadata
/// and a tensor index) and a little-endian float64 payload. Layout is
/// documented in docs/formats.md.
struct Checkpoint {
  std::string kind;  // "joint" or "detector"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// IoError if the file is missing or truncated, SchemaError if it is not a
/// checkpoint of a supported version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies parameter values into a checkpoint's tensor list.
void store_parameters(Checkpoint& ckpt, const nn::ParameterList& params);
/// Overwrites parameter values from a checkpoint; names and shapes must match.
void load_parameters(const Checkpoint& ckpt, const nn::ParameterList& params);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
/// Hash of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace diffaug
