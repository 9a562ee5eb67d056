#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "modwatch/model.hpp"
#include "modwatch/parameters.hpp"

namespace modwatch::model {

// MWCK container:
//   "MWCK" | u32 version | u32 n | n bytes of "key=value\n" lines (spec.* keys
//   hold the ModelSpec, meta.* keys free-form metadata) | u32 layer count |
//   per layer: name, u8 kind, kernel and bias blocks (u32 rank, u64 dims,
//   little-endian float32 values).
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  ModelSpec spec;
  nn::ModelParameters params;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace modwatch::model
