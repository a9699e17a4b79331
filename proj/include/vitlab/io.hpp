// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vitlab {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Shortest representation that parses back to the same value.
std::string format_number(double value);
std::string format_number(float value);

double parse_number(std::string_view text);

// Minimal CSV: comma separated, no quoting (fields never contain commas).
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& row(std::vector<std::string> fields);
  const std::string& str() const noexcept { return text_; }
  std::size_t rows() const noexcept { return rows_; }

 private:
  std::size_t columns_;
  std::size_t rows_ = 0;
  std::string text_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);

// Plain PGM (P2), maxval 255.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::string_view text);

}  // namespace vitlab
