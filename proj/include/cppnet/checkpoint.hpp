#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "cppnet/errors.hpp"
#include "cppnet/gcn_model.hpp"
#include "cppnet/io.hpp"

namespace cppnet {

// Binary checkpoint, little-endian:
//   "CPPNETCK" | u32 version | i32 hidden, conv_layers, mlp_layers, n_max |
//   u8 normalize_coords | u32 tensor_count |
//   per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f64 (row-major)
inline constexpr std::string_view kCheckpointMagic = "CPPNETCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::parse_error, "checkpoint truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class S>
std::string checkpoint_bytes(const ModelParams<S>& params) {
  auto p = cast_params<double>(params);
  std::string out(kCheckpointMagic);
  detail::put(out, kCheckpointVersion);
  detail::put<std::int32_t>(out, p.config.hidden);
  detail::put<std::int32_t>(out, p.config.conv_layers);
  detail::put<std::int32_t>(out, p.config.mlp_layers);
  detail::put<std::int32_t>(out, p.config.n_max);
  detail::put<std::uint8_t>(out, p.config.normalize_coords ? 1 : 0);
  auto views = tensor_views(p);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(views.size()));
  for (const auto& v : views) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(v.name.size()));
    out += v.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols));
    out.append(reinterpret_cast<const char*>(v.data), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  return out;
}

inline ModelParams<double> parse_checkpoint(std::string_view bytes) {
  detail::Reader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() || in.take(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error(Errc::parse_error, "not a checkpoint");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(Errc::format_version_mismatch, "checkpoint version " + std::to_string(version));
  }
  ModelConfig config;
  config.hidden = in.get<std::int32_t>();
  config.conv_layers = in.get<std::int32_t>();
  config.mlp_layers = in.get<std::int32_t>();
  config.n_max = in.get<std::int32_t>();
  config.normalize_coords = in.get<std::uint8_t>() != 0;
  try {
    config.validate();
  } catch (const Error& e) {
    throw Error(Errc::parse_error, std::string("checkpoint config: ") + e.what());
  }
  auto params = zero_params<double>(config);
  auto views = tensor_views(params);
  if (in.get<std::uint32_t>() != views.size()) throw Error(Errc::shape_mismatch, "checkpoint tensor count");
  for (auto& v : views) {
    const auto len = in.get<std::uint32_t>();
    if (in.take(len) != v.name) throw Error(Errc::shape_mismatch, "checkpoint tensor order, expected " + v.name);
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    if (rows != v.rows || cols != v.cols) throw Error(Errc::shape_mismatch, "checkpoint shape of " + v.name);
    auto raw = in.take(sizeof(double) * static_cast<std::size_t>(v.size()));
    std::memcpy(v.data, raw.data(), raw.size());
  }
  if (!in.done()) throw Error(Errc::parse_error, "trailing bytes in checkpoint");
  return params;
}

template <class S>
void save_checkpoint(const ModelParams<S>& params, const fs::path& path) {
  try {
    write_file_atomic(path, checkpoint_bytes(params));
  } catch (const Error& e) {
    throw Error(Errc::checkpoint_write_failure, e.what());
  }
}

inline ModelParams<double> load_checkpoint(const fs::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace cppnet
