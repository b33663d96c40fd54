// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint layout, all integers little-endian:
//
//   "IICKPT01"                          8 bytes magic
//   u32 format version, u32 element width in bytes (4 or 8)
//   UNetConfig: u64 image_size, in, cond, out, base, u64 #mults, u64 mults...,
//               u64 blocks_per_level, time_embed_dim, timesteps
//   u64 active depth
//   u64 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 dims..., values
//   u64 FNV-1a hash of every preceding byte

#pragma once

#include <skipstep/unet.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipstep {

inline constexpr char kCheckpointMagic[8] = {'I', 'I', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t n, std::string source) : p_(data), n_(n), src_(std::move(source)) {}

  template <class T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* out, std::size_t n) {
    if (pos_ + n > n_) throw std::runtime_error(src_ + ": checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string src_;
};

}  // namespace detail

template <class Real>
std::vector<unsigned char> serialize_checkpoint(const DenoiserModel<Real>& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(sizeof(Real));
  const UNetConfig& c = model.config();
  for (std::size_t v : {c.image_size, c.in_channels, c.cond_channels, c.out_channels, c.base_channels}) {
    w.put<std::uint64_t>(v);
  }
  w.put<std::uint64_t>(c.channel_mults.size());
  for (std::size_t m : c.channel_mults) w.put<std::uint64_t>(m);
  for (std::size_t v : {c.blocks_per_level, c.time_embed_dim, c.timesteps}) w.put<std::uint64_t>(v);
  w.put<std::uint64_t>(model.active_depth());
  w.put<std::uint64_t>(model.params().size());
  for (const auto& p : model.params()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.put<std::uint64_t>(d);
    w.raw(p.tensor.data(), p.tensor.numel() * sizeof(Real));
  }
  const std::uint64_t h = fnv1a64(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(h);
  return std::move(w.bytes());
}

template <class Real>
DenoiserModel<Real> deserialize_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source) {
  if (bytes.size() < sizeof kCheckpointMagic + 16) throw std::runtime_error(source + ": file too short for a checkpoint");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (fnv1a64(bytes.data(), body) != stored) throw std::runtime_error(source + ": checkpoint checksum mismatch");

  detail::ByteReader r(bytes.data(), body, source);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw std::runtime_error(source + ": bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) throw std::runtime_error(source + ": element width " + std::to_string(width));

  UNetConfig c;
  c.image_size = r.get<std::uint64_t>();
  c.in_channels = r.get<std::uint64_t>();
  c.cond_channels = r.get<std::uint64_t>();
  c.out_channels = r.get<std::uint64_t>();
  c.base_channels = r.get<std::uint64_t>();
  const auto nm = r.get<std::uint64_t>();
  if (nm > 64) throw std::runtime_error(source + ": implausible channel_mults length");
  c.channel_mults.resize(nm);
  for (auto& m : c.channel_mults) m = r.get<std::uint64_t>();
  c.blocks_per_level = r.get<std::uint64_t>();
  c.time_embed_dim = r.get<std::uint64_t>();
  c.timesteps = r.get<std::uint64_t>();
  c.validate();
  const auto active = r.get<std::uint64_t>();

  const auto count = r.get<std::uint64_t>();
  std::vector<NamedTensor<Real>> params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>();
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw std::runtime_error(source + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (n * width > r.remaining()) throw std::runtime_error(source + ": tensor '" + name + "' truncated");
    std::vector<Real> values(n);
    if (width == sizeof(Real)) {
      r.raw(values.data(), n * sizeof(Real));
    } else if (width == 4) {
      for (auto& v : values) v = static_cast<Real>(r.get<float>());
    } else {
      for (auto& v : values) v = static_cast<Real>(r.get<double>());
    }
    params.push_back({std::move(name), Tensor<Real>(shape, std::move(values))});
  }
  if (r.remaining() != 0) throw std::runtime_error(source + ": trailing bytes after tensor table");
  auto model = DenoiserModel<Real>::from_params(c, std::move(params));
  model.set_active_depth(active);
  return model;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const DenoiserModel<Real>& model) {
  write_file_bytes(path, serialize_checkpoint(model));
}

template <class Real>
DenoiserModel<Real> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<Real>(read_file_bytes(path), path.string());
}

}  // namespace skipstep
