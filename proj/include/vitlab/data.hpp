// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitlab/tensor.hpp"

namespace vitlab {

class DataError : public Error {
 public:
  using Error::Error;
};

// Images [n, H, W, C] as float; readers produce values in [0, 1].
struct Dataset {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t class_count = 0;
  std::vector<float> images;
  std::vector<std::uint32_t> labels;

  std::size_t image_size() const { return height * width * channels; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_size(), image_size());
  }
  // Checks counts, label range and that every value lies in [lo, hi].
  void validate(float lo = 0.0f, float hi = 1.0f) const;
};

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

// Unsigned-byte IDX with the given rank (magic 0x00000800 | rank).
IdxArray parse_idx(std::string_view bytes, std::size_t expected_rank, std::string_view name);

// Pairs an IDX image file (magic 0x00000803) with a label file (0x00000801).
Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count = 10);
Dataset decode_idx(std::string_view image_bytes, std::string_view label_bytes,
                   std::size_t class_count = 10);

// split: "train" or "test"; canonical MNIST file names inside dir.
Dataset read_mnist(const std::filesystem::path& dir, std::string_view split);

// Records of 1 label byte + 3072 channel-planar pixel bytes (32x32x3).
Dataset read_cifar10_bin(const std::vector<std::filesystem::path>& paths);
Dataset decode_cifar10(std::string_view bytes);
// split: "train" (data_batch_1..5.bin) or "test" (test_batch.bin).
Dataset read_cifar10(const std::filesystem::path& dir, std::string_view split);

// x -> 2x - 1. Requires every value in [0, 1], so applying it twice throws.
Dataset value_range(const Dataset& d);

// Deterministic per-epoch shuffling keyed by (seed, epoch) through CounterRng.
struct BatchPlan {
  std::uint64_t seed = 0;
  std::size_t batch_size = 128;

  // Fisher-Yates over 0..n-1 drawing from CounterRng(seed, epoch).
  std::vector<std::size_t> permutation(std::size_t n, std::size_t epoch) const;
  // Consecutive chunks of the permutation; the final short chunk is kept.
  std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t epoch) const;
};

template <typename T>
struct Batch {
  Tensor<T> images;   // [B, H, W, C]
  Tensor<T> targets;  // one-hot [B, K]
  std::vector<std::uint32_t> labels;
};

template <typename T>
Batch<T> gather(const Dataset& d, std::span<const std::size_t> indices);

template <typename T>
std::vector<Batch<T>> batches(const Dataset& d, const BatchPlan& plan, std::size_t epoch);

// Endless stream of batches across epochs.
class BatchStream {
 public:
  BatchStream(const Dataset& d, BatchPlan plan);

  template <typename T>
  Batch<T> next();

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  const Dataset* data_;
  BatchPlan plan_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> current_;
};

// Class k has pixel level (k+1)/(K+1) plus N(0, 0.15^2) noise, clamped to
// [0, 1]. Labels cycle 0..K-1 so counts are balanced within one.
Dataset synthetic_dataset(std::size_t class_count, std::size_t n, std::size_t height,
                          std::size_t width, std::size_t channels, std::uint64_t seed);

}  // namespace vitlab
