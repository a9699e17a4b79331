// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "vitlab/tensor.hpp"

namespace vitlab {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

template <typename F>
std::string shortest(F value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_number(double value) { return shortest(value); }
std::string format_number(float value) { return shortest(value); }

double parse_number(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw Error("not a number: '" + std::string(text) + "'");
  }
  return v;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  row(std::move(header));
  rows_ = 0;
}

CsvWriter& CsvWriter::row(std::vector<std::string> fields) {
  if (fields.size() != columns_) {
    throw Error("CSV row has " + std::to_string(fields.size()) + " fields, expected " +
                std::to_string(columns_));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\n") != std::string::npos) {
      throw Error("CSV field contains a separator: '" + fields[i] + "'");
    }
    if (i) text_ += ',';
    text_ += fields[i];
  }
  text_ += '\n';
  ++rows_;
  return *this;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error("CSV has no column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.emplace_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) throw Error("ragged CSV row");
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

std::string encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) throw Error("PGM size mismatch");
  std::string s = "P2\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                  "\n255\n";
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      if (c) s += ' ';
      s += std::to_string(image.pixels[r * image.width + c]);
    }
    s += '\n';
  }
  return s;
}

GrayImage decode_pgm(std::string_view text) {
  std::istringstream in{std::string(text)};
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw Error("truncated PGM");
  };
  if (token() != "P2") throw Error("not a plain PGM (P2) file");
  GrayImage img;
  img.width = static_cast<std::size_t>(parse_number(token()));
  img.height = static_cast<std::size_t>(parse_number(token()));
  const double maxval = parse_number(token());
  if (maxval != 255.0) throw Error("PGM maxval must be 255");
  img.pixels.reserve(img.width * img.height);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double v = parse_number(token());
    if (v < 0 || v > 255) throw Error("PGM sample out of range");
    img.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  return img;
}

}  // namespace vitlab
