// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "vitlab/io.hpp"

namespace vitlab {
namespace {

constexpr std::string_view kMagic = "VITLABCK";

void put_u(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
void put_value(std::string& out, T v) {
  if constexpr (std::is_same_v<T, float>) {
    put_u(out, std::bit_cast<std::uint32_t>(v), 4);
  } else {
    put_u(out, std::bit_cast<std::uint64_t>(v), 8);
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error(std::string("truncated checkpoint while reading ") + what + ": need " +
                  std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                  " left");
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

ModelConfig read_header(Reader& r) {
  if (r.take(kMagic.size(), "magic") != kMagic) throw Error("not a vitlab checkpoint (bad magic)");
  const auto version = r.u(4, "version");
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = r.u(4, "header length");
  const auto header = r.take(len, "header");
  return model_config_from_json(nlohmann::json::parse(header), "checkpoint.model");
}

}  // namespace

template <typename T>
std::string encode_checkpoint(const ModelConfig& cfg, const ParamTree<T>& params) {
  std::string out(kMagic);
  put_u(out, kCheckpointVersion, 4);
  const std::string header = to_json(cfg).dump();
  put_u(out, header.size(), 4);
  out += header;
  put_u(out, params.size(), 8);
  for (const auto& [path, t] : params) {
    put_u(out, path.size(), 4);
    out += path;
    put_u(out, static_cast<std::uint8_t>(dtype_of<T>()), 1);
    put_u(out, t.rank(), 4);
    for (std::size_t d : t.shape()) put_u(out, d, 8);
    put_u(out, t.size() * sizeof(T), 8);
    for (T v : t.data()) put_value(out, v);
  }
  return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  Checkpoint<T> ck{read_header(r), {}};
  const auto count = r.u(8, "entry count");
  for (std::uint64_t e = 0; e < count; ++e) {
    std::string path(r.take(r.u(4, "path length"), "path"));
    const auto dtype = static_cast<DType>(r.u(1, "dtype"));
    if (dtype != dtype_of<T>()) {
      throw Error("checkpoint entry '" + path + "' is " + std::string(dtype_name(dtype)) +
                  ", expected " + std::string(dtype_name(dtype_of<T>())));
    }
    Shape shape(r.u(4, "rank"));
    for (auto& d : shape) d = r.u(8, "dims");
    const auto payload = r.u(8, "payload length");
    if (payload != numel(shape) * sizeof(T)) {
      throw Error("checkpoint entry '" + path + "' payload does not match its shape");
    }
    std::vector<T> values(numel(shape));
    for (T& v : values) {
      if constexpr (std::is_same_v<T, float>) {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(r.u(4, "values")));
      } else {
        v = std::bit_cast<double>(r.u(8, "values"));
      }
    }
    ck.params.add(std::move(path), Tensor<T>(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw Error("trailing bytes after checkpoint entries");
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ParamTree<T>& params) {
  write_file_atomic(path, encode_checkpoint(cfg, params));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(read_file(path));
}

DType checkpoint_dtype(std::string_view bytes) {
  Reader r(bytes);
  read_header(r);
  if (r.u(8, "entry count") == 0) return DType::f32;
  r.take(r.u(4, "path length"), "path");
  const auto dtype = r.u(1, "dtype");
  if (dtype > 1) throw Error("unknown dtype tag " + std::to_string(dtype));
  return static_cast<DType>(dtype);
}

#define VITLAB_INSTANTIATE_CKPT(T)                                                       \
  template std::string encode_checkpoint<T>(const ModelConfig&, const ParamTree<T>&);    \
  template Checkpoint<T> decode_checkpoint<T>(std::string_view);                         \
  template void save_checkpoint<T>(const std::filesystem::path&, const ModelConfig&,     \
                                   const ParamTree<T>&);                                 \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

VITLAB_INSTANTIATE_CKPT(float)
VITLAB_INSTANTIATE_CKPT(double)

#undef VITLAB_INSTANTIATE_CKPT

}  // namespace vitlab
