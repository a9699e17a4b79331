// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

#include <numeric>
#include <set>

#include "vitlab/data.hpp"
#include "vitlab/io.hpp"

using namespace vitlab;

namespace {

std::string be32(std::uint32_t v) {
  return {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
}

std::string idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w, std::uint8_t first = 0) {
  std::string s = be32(0x803) + be32(n) + be32(h) + be32(w);
  for (std::uint32_t i = 0; i < n * h * w; ++i) s.push_back(char(std::uint8_t(first + i)));
  return s;
}

std::string idx_labels(std::vector<std::uint8_t> labels) {
  std::string s = be32(0x801) + be32(std::uint32_t(labels.size()));
  for (auto l : labels) s.push_back(char(l));
  return s;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("IDX decoding") {
  const auto d = decode_idx(idx_images(3, 2, 2, 253), idx_labels({1, 0, 9}));
  CHECK(d.count == 3);
  CHECK(d.height == 2);
  CHECK(d.width == 2);
  CHECK(d.channels == 1);
  CHECK(d.labels == std::vector<std::uint32_t>{1, 0, 9});
  CHECK(d.images[2] == 1.0f);  // byte 255
  CHECK(d.images[3] == 0.0f);  // byte 0 after wrap
  CHECK(d.images[0] == 253.0f / 255.0f);
  d.validate();
}

TEST_CASE("IDX errors are descriptive") {
  const std::string good = idx_images(2, 3, 3);
  const auto truncated = message_of([&] { parse_idx(good.substr(0, good.size() - 5), 3, "imgs"); });
  CHECK(truncated.find("missing 5 bytes") != std::string::npos);
  CHECK(truncated.find("imgs") != std::string::npos);

  const auto magic = message_of([&] { parse_idx(be32(0x900) + good.substr(4), 3, "imgs"); });
  CHECK(magic.find("magic") != std::string::npos);
  CHECK_THROWS_AS(parse_idx(good.substr(0, 6), 3, "imgs"), DataError);
  // 2^32-1 cubed overflows a 64-bit size.
  CHECK_THROWS_AS(parse_idx(be32(0x803) + be32(0xffffffffu) + be32(0xffffffffu) + be32(0xffffffffu), 3, "x"),
                  DataError);
  CHECK_THROWS_AS(parse_idx(good + "x", 3, "imgs"), DataError);
  CHECK_THROWS_AS(decode_idx(good, idx_labels({0, 1, 2})), DataError);    // count mismatch
  CHECK_THROWS_AS(decode_idx(good, idx_labels({0, 10})), DataError);      // label out of range
}

TEST_CASE("IDX files on disk") {
  const auto dir = vitlab::testing::scratch_dir("idx");
  write_file_atomic(dir / "train-images-idx3-ubyte", idx_images(4, 2, 2));
  write_file_atomic(dir / "train-labels-idx1-ubyte", idx_labels({0, 1, 2, 3}));
  const auto d = read_mnist(dir, "train");
  CHECK(d.count == 4);
  CHECK_THROWS(read_mnist(dir, "test"));
  CHECK_THROWS(read_mnist(dir, "validation"));
}

TEST_CASE("CIFAR-10 records") {
  std::string bytes;
  for (int r = 0; r < 10; ++r) {
    bytes.push_back(char(r == 0 ? 9 : r % 10));
    for (int i = 0; i < 3072; ++i) bytes.push_back(char(std::uint8_t((i * 7 + r) % 256)));
  }
  CHECK(bytes.size() == 30730);
  const auto d = decode_cifar10(bytes);
  CHECK(d.count == 10);
  CHECK(d.labels[0] == 9);
  CHECK(d.height == 32);
  CHECK(d.channels == 3);
  // Per-index oracle: planar byte (c, y, x) lands at HWC (y, x, c).
  bool all = true;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const std::uint8_t b = std::uint8_t(bytes[r * 3073 + 1 + c * 1024 + y * 32 + x]);
          all &= d.images[r * 3072 + (y * 32 + x) * 3 + c] == float(b) / 255.0f;
        }
  CHECK(all);
  CHECK_THROWS_AS(decode_cifar10(bytes.substr(1)), DataError);
  bytes[3073] = char(10);
  CHECK_THROWS_AS(decode_cifar10(bytes), DataError);
}

TEST_CASE("value_range") {
  Dataset d{3, 1, 1, 1, 2, {0.0f, 1.0f, 0.5f}, {0, 1, 0}};
  const auto m = value_range(d);
  CHECK(m.images == std::vector<float>{-1.0f, 1.0f, 0.0f});
  // Not idempotent: a second application would map 0 to -3, so it is refused.
  CHECK_THROWS_AS(value_range(m), DataError);

  const auto s = synthetic_dataset(3, 30, 4, 4, 1, 2);
  const auto t = value_range(s);
  const double a = std::accumulate(s.images.begin(), s.images.end(), 0.0) / s.images.size();
  const double b = std::accumulate(t.images.begin(), t.images.end(), 0.0) / t.images.size();
  CHECK(std::abs(b - (2 * a - 1)) < 1e-6);
}

TEST_CASE("batching") {
  const auto d = synthetic_dataset(3, 10, 2, 2, 1, 0);
  BatchPlan plan{7, 4};
  const auto idx = plan.batch_indices(10, 0);
  CHECK(idx.size() == 3);
  CHECK(idx[0].size() == 4);
  CHECK(idx[1].size() == 4);
  CHECK(idx[2].size() == 2);

  const auto b1 = batches<float>(d, plan, 0);
  const auto b2 = batches<float>(d, plan, 0);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    CHECK(bitwise_equal(b1[i].images, b2[i].images));
    CHECK(bitwise_equal(b1[i].targets, b2[i].targets));
    for (std::size_t r = 0; r < b1[i].labels.size(); ++r) {
      float row = 0.0f;
      for (std::size_t k = 0; k < 3; ++k) row += b1[i].targets[r * 3 + k];
      CHECK(row == 1.0f);
      CHECK(b1[i].targets[r * 3 + b1[i].labels[r]] == 1.0f);
    }
  }
  CHECK(b1[0].images.shape() == Shape{4, 2, 2, 1});
  CHECK_THROWS((BatchPlan{0, 0}.batch_indices(10, 0)));
}

TEST_CASE("each epoch is a permutation and epochs differ") {
  BatchPlan plan{3, 5};
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    const auto p = plan.permutation(97, epoch);
    CHECK(std::set<std::size_t>(p.begin(), p.end()).size() == 97);
    CHECK(*std::max_element(p.begin(), p.end()) == 96);
  }
  CHECK(plan.permutation(97, 0) != plan.permutation(97, 1));
  CHECK(plan.permutation(97, 2) == plan.permutation(97, 2));
}

TEST_CASE("batch stream rolls over epochs") {
  const auto d = synthetic_dataset(2, 6, 2, 2, 1, 0);
  BatchStream s(d, BatchPlan{1, 4});
  std::multiset<std::uint32_t> seen;
  for (int i = 0; i < 2; ++i)
    for (auto l : s.next<float>().labels) seen.insert(l);
  CHECK(seen.size() == 6);
  CHECK(s.next<float>().labels.size() == 4);
  CHECK(s.epoch() == 1);
}

TEST_CASE("synthetic dataset") {
  const auto a = synthetic_dataset(2, 64, 8, 8, 1, 0);
  const auto b = synthetic_dataset(2, 64, 8, 8, 1, 0);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  a.validate();
  double mean[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (std::size_t i = 0; i < a.count; ++i) {
    const auto img = a.image(i);
    mean[a.labels[i]] += std::accumulate(img.begin(), img.end(), 0.0) / img.size();
    ++n[a.labels[i]];
  }
  CHECK(std::max(n[0], n[1]) - std::min(n[0], n[1]) <= 1);
  // Class levels are 1/3 and 2/3; noise averages out over 64 pixels.
  CHECK(mean[1] / n[1] - mean[0] / n[0] > 0.25);
}
