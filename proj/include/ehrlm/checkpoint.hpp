// SPDX-License-Identifier: Apache-2.0
//
// Binary model checkpoints. Layout (all integers little-endian):
//
//   magic        8 bytes  "EHRLMCK\0"
//   version      u32      kCheckpointVersion
//   config_len   u64      then config_len bytes of compact JSON (ModelConfig)
//   n_tensors    u32
//   directory    per tensor, sorted by name:
//                  u32 name_len, name bytes, u32 rank, rank x u64 dims,
//                  u64 offset (elements from payload start), u64 count
//   payload_len  u64      then payload_len bytes of float32 values
//   digest       u64      FNV-1a 64 over every preceding byte
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ehrlm/encoder.hpp"

namespace ehrlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'E', 'H', 'R', 'L', 'M', 'C', 'K', '\0'};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size,
                      std::uint64_t hash = 0xcbf29ce484222325ULL);

std::vector<std::uint8_t> serialize_checkpoint(const Encoder<float>& model);

/// Parses checkpoint bytes. Throws CorruptCheckpoint on a bad magic, a
/// truncated file, a digest mismatch or malformed directory; VersionError on
/// an unknown format version or, when `expected` is given, on any config or
/// tensor-shape disagreement with it.
Encoder<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                      const std::optional<ModelConfig>& expected = std::nullopt);

void save_checkpoint(const Encoder<float>& model, const std::filesystem::path& path);
Encoder<float> load_checkpoint(const std::filesystem::path& path,
                               const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace ehrlm
