#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/params.hpp"

namespace vislex {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serialised model state. `tensors` holds the parameters followed by any
/// non-trainable buffers; `digest` is SHA-256 over the tensor payload.
struct ModelCheckpoint {
  std::string kind;
  nlohmann::json config;
  std::vector<Parameter> tensors;
  std::string digest;
  bool frozen = false;
  nlohmann::json meta;  // free-form provenance, not covered by the digest

  const Mat& tensor(const std::string& name) const;
};

/// Payload layout shared by digests and blob files.
std::vector<unsigned char> serialize_tensors(const std::vector<Parameter>& tensors);
std::vector<Parameter> deserialize_tensors(std::span<const unsigned char> payload);
std::string tensors_digest(const std::vector<Parameter>& tensors);

/// Writes `<base>.bin` (magic, version, payload) and `<base>.json` (kind,
/// config, digest, frozen flag, version).
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& base);
/// Verifies magic, version and digest before returning.
ModelCheckpoint load_checkpoint(const std::filesystem::path& base);

}  // namespace vislex
