// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers little-endian):
//
//   8 bytes   magic "VITLABCK"
//   u32       format version
//   u32       header length, then that many bytes of ModelConfig JSON
//   u64       entry count
//   per entry:
//     u32 path length, path bytes
//     u8  dtype (0 = float32, 1 = float64)
//     u32 rank, u64 dims[rank]
//     u64 payload length, payload (IEEE-754 little-endian values)

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "vitlab/config.hpp"
#include "vitlab/model.hpp"

namespace vitlab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ParamTree<T> params;
};

template <typename T>
std::string encode_checkpoint(const ModelConfig& cfg, const ParamTree<T>& params);

template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ParamTree<T>& params);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// dtype of the first entry.
DType checkpoint_dtype(std::string_view bytes);

}  // namespace vitlab
