// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/data.hpp"

#include <algorithm>

#include "vitlab/io.hpp"
#include "vitlab/rng.hpp"

namespace vitlab {

void Dataset::validate(float lo, float hi) const {
  if (count == 0) throw DataError("dataset is empty");
  if (images.size() != count * image_size()) throw DataError("image buffer size mismatch");
  if (labels.size() != count) throw DataError("label count mismatch");
  for (auto l : labels) {
    if (l >= class_count) {
      throw DataError("label " + std::to_string(l) + " outside [0, " +
                      std::to_string(class_count) + ")");
    }
  }
  for (float v : images) {
    if (!(v >= lo && v <= hi)) {
      throw DataError("pixel value " + format_number(v) + " outside [" + format_number(lo) +
                      ", " + format_number(hi) + "]");
    }
  }
}

IdxArray parse_idx(std::string_view bytes, std::size_t expected_rank, std::string_view name) {
  const std::string what(name);
  if (bytes.size() < 4) {
    throw DataError("truncated IDX file '" + what + "': missing " +
                    std::to_string(4 - bytes.size()) + " bytes of the magic number");
  }
  auto u8 = [&](std::size_t i) { return static_cast<std::uint8_t>(bytes[i]); };
  const std::uint32_t magic = (std::uint32_t(u8(0)) << 24) | (std::uint32_t(u8(1)) << 16) |
                              (std::uint32_t(u8(2)) << 8) | u8(3);
  const std::uint32_t expected = 0x00000800u | static_cast<std::uint32_t>(expected_rank);
  if (magic != expected) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    char want[16];
    std::snprintf(want, sizeof want, "0x%08X", expected);
    throw DataError("bad IDX magic " + std::string(buf) + " in '" + what + "', expected " + want);
  }
  const std::size_t header = 4 + 4 * expected_rank;
  if (bytes.size() < header) {
    throw DataError("truncated IDX file '" + what + "': missing " +
                    std::to_string(header - bytes.size()) + " bytes of the dimension header");
  }
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t d = 0; d < expected_rank; ++d) {
    const std::size_t o = 4 + 4 * d;
    const std::uint32_t dim = (std::uint32_t(u8(o)) << 24) | (std::uint32_t(u8(o + 1)) << 16) |
                              (std::uint32_t(u8(o + 2)) << 8) | u8(o + 3);
    out.dims.push_back(dim);
    if (dim != 0 && total > (SIZE_MAX >> 1) / dim) {
      throw DataError("IDX dimensions overflow in '" + what + "'");
    }
    total *= dim;
  }
  const std::size_t have = bytes.size() - header;
  if (have < total) {
    throw DataError("truncated IDX file '" + what + "': payload needs " + std::to_string(total) +
                    " bytes but only " + std::to_string(have) + " are present (missing " +
                    std::to_string(total - have) + " bytes)");
  }
  if (have > total) {
    throw DataError("IDX file '" + what + "' has " + std::to_string(have - total) +
                    " trailing bytes");
  }
  out.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

Dataset decode_idx(std::string_view image_bytes, std::string_view label_bytes,
                   std::size_t class_count) {
  const IdxArray imgs = parse_idx(image_bytes, 3, "images");
  const IdxArray lbls = parse_idx(label_bytes, 1, "labels");
  if (imgs.dims[0] != lbls.dims[0]) {
    throw DataError("IDX image count " + std::to_string(imgs.dims[0]) +
                    " does not match label count " + std::to_string(lbls.dims[0]));
  }
  Dataset d;
  d.count = imgs.dims[0];
  d.height = imgs.dims[1];
  d.width = imgs.dims[2];
  d.channels = 1;
  d.class_count = class_count;
  d.images.resize(imgs.bytes.size());
  for (std::size_t i = 0; i < imgs.bytes.size(); ++i) {
    d.images[i] = static_cast<float>(imgs.bytes[i]) / 255.0f;
  }
  d.labels.assign(lbls.bytes.begin(), lbls.bytes.end());
  d.validate();
  return d;
}

Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count) {
  return decode_idx(read_file(images), read_file(labels), class_count);
}

Dataset read_mnist(const std::filesystem::path& dir, std::string_view split) {
  std::string prefix;
  if (split == "train") {
    prefix = "train";
  } else if (split == "test") {
    prefix = "t10k";
  } else {
    throw DataError("unknown split '" + std::string(split) + "'; valid options: train, test");
  }
  return read_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
}

Dataset decode_cifar10(std::string_view bytes) {
  constexpr std::size_t kPlane = 32 * 32;
  constexpr std::size_t kRecord = 1 + 3 * kPlane;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw DataError("CIFAR-10 payload of " + std::to_string(bytes.size()) +
                    " bytes is not a whole number of 3073-byte records");
  }
  Dataset d;
  d.count = bytes.size() / kRecord;
  d.height = 32;
  d.width = 32;
  d.channels = 3;
  d.class_count = 10;
  d.images.resize(d.count * 3 * kPlane);
  d.labels.resize(d.count);
  for (std::size_t n = 0; n < d.count; ++n) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + n * kRecord);
    d.labels[n] = rec[0];
    float* dst = d.images.data() + n * 3 * kPlane;
    for (std::size_t p = 0; p < kPlane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        dst[p * 3 + c] = static_cast<float>(rec[1 + c * kPlane + p]) / 255.0f;
      }
    }
  }
  d.validate();
  return d;
}

Dataset read_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  if (paths.empty()) throw DataError("no CIFAR-10 files given");
  std::string all;
  for (const auto& p : paths) {
    const std::string bytes = read_file(p);
    if (bytes.empty() || bytes.size() % 3073 != 0) {
      throw DataError("'" + p.string() + "' is " + std::to_string(bytes.size()) +
                      " bytes, not a whole number of 3073-byte records");
    }
    all += bytes;
  }
  return decode_cifar10(all);
}

Dataset read_cifar10(const std::filesystem::path& dir, std::string_view split) {
  if (split == "train") {
    std::vector<std::filesystem::path> files;
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    return read_cifar10_bin(files);
  }
  if (split == "test") return read_cifar10_bin({dir / "test_batch.bin"});
  throw DataError("unknown split '" + std::string(split) + "'; valid options: train, test");
}

Dataset value_range(const Dataset& d) {
  d.validate(0.0f, 1.0f);
  Dataset out = d;
  for (float& v : out.images) v = 2.0f * v - 1.0f;
  return out;
}

std::vector<std::size_t> BatchPlan::permutation(std::size_t n, std::size_t epoch) const {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  CounterRng rng(seed, epoch);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::vector<std::size_t>> BatchPlan::batch_indices(std::size_t n,
                                                               std::size_t epoch) const {
  if (batch_size < 1) throw DataError("batch_size must be at least 1");
  const auto perm = permutation(n, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

template <typename T>
Batch<T> gather(const Dataset& d, std::span<const std::size_t> indices) {
  const std::size_t b = indices.size();
  const std::size_t sz = d.image_size();
  std::vector<T> img(b * sz);
  std::vector<T> onehot(b * d.class_count, T(0));
  std::vector<std::uint32_t> labels(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (indices[i] >= d.count) throw DataError("batch index out of range");
    const auto src = d.image(indices[i]);
    std::copy(src.begin(), src.end(), img.begin() + static_cast<std::ptrdiff_t>(i * sz));
    labels[i] = d.labels[indices[i]];
    onehot[i * d.class_count + labels[i]] = T(1);
  }
  return Batch<T>{Tensor<T>(Shape{b, d.height, d.width, d.channels}, std::move(img)),
                  Tensor<T>(Shape{b, d.class_count}, std::move(onehot)), std::move(labels)};
}

template <typename T>
std::vector<Batch<T>> batches(const Dataset& d, const BatchPlan& plan, std::size_t epoch) {
  std::vector<Batch<T>> out;
  for (const auto& idx : plan.batch_indices(d.count, epoch)) out.push_back(gather<T>(d, idx));
  return out;
}

BatchStream::BatchStream(const Dataset& d, BatchPlan plan) : data_(&d), plan_(plan) {
  current_ = plan_.batch_indices(d.count, 0);
}

template <typename T>
Batch<T> BatchStream::next() {
  if (cursor_ == current_.size()) {
    ++epoch_;
    cursor_ = 0;
    current_ = plan_.batch_indices(data_->count, epoch_);
  }
  return gather<T>(*data_, current_[cursor_++]);
}

Dataset synthetic_dataset(std::size_t class_count, std::size_t n, std::size_t height,
                          std::size_t width, std::size_t channels, std::uint64_t seed) {
  if (class_count == 0 || n == 0) throw DataError("synthetic dataset needs classes and examples");
  Dataset d;
  d.count = n;
  d.height = height;
  d.width = width;
  d.channels = channels;
  d.class_count = class_count;
  d.images.resize(n * d.image_size());
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(i % class_count);
    d.labels[i] = label;
    const double level = static_cast<double>(label + 1) / static_cast<double>(class_count + 1);
    CounterRng rng(seed, i);
    float* dst = d.images.data() + i * d.image_size();
    for (std::size_t p = 0; p < d.image_size(); ++p) {
      const double v = level + 0.15 * rng.normal();
      dst[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return d;
}

template Batch<float> gather<float>(const Dataset&, std::span<const std::size_t>);
template Batch<double> gather<double>(const Dataset&, std::span<const std::size_t>);
template std::vector<Batch<float>> batches<float>(const Dataset&, const BatchPlan&, std::size_t);
template std::vector<Batch<double>> batches<double>(const Dataset&, const BatchPlan&, std::size_t);
template Batch<float> BatchStream::next<float>();
template Batch<double> BatchStream::next<double>();

}  // namespace vitlab
