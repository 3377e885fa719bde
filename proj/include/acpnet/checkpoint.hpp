#pragma once

// Checkpoint layout (all integers little-endian):
//
//   magic       8 bytes  "ACPNETCK"
//   version     u32      1
//   flags       u32      bit 0: Adam moments present
//   count       u64      number of named parameters
//   per parameter:
//     name_len  u64, name (UTF-8, no terminator)
//     rank      u64, dims rank * u64
//     data      prod(dims) * f64 (IEEE-754 bit pattern, little-endian)
//     if flags & 1:  adam_m (same count f64), adam_v (same count f64), step u64

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/parameter.hpp"

namespace acpnet {

inline constexpr char kCheckpointMagic[8] = {'A', 'C', 'P', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kCheckpointAdamFlag = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64s(std::ostream& os, std::span<const double> xs) {
  for (double x : xs) put_u64(os, std::bit_cast<std::uint64_t>(x));
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void get_f64s(std::istream& is, std::span<double> xs) {
  for (double& x : xs) x = std::bit_cast<double>(get_u64(is));
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const ParameterSet& params, bool with_moments = false) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, with_moments ? kCheckpointAdamFlag : 0u);
  detail::put_u64(os, params.items().size());
  for (const auto& [name, p] : params.items()) {
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, p->value.rank());
    for (std::size_t d : p->value.shape()) detail::put_u64(os, d);
    detail::put_f64s(os, p->value.data());
    if (with_moments) {
      const Tensor m = p->adam_m.size() == p->value.size() ? p->adam_m : Tensor(p->value.shape());
      const Tensor v = p->adam_v.size() == p->value.size() ? p->adam_v : Tensor(p->value.shape());
      detail::put_f64s(os, m.data());
      detail::put_f64s(os, v.data());
      detail::put_u64(os, p->step_count);
    }
  }
  if (!os) throw CheckpointError("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            bool with_moments = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  save_checkpoint(os, params, with_moments);
}

/// Loads values (and moments, when present) into `params`. Every parameter in
/// the set must appear in the file with an identical shape.
inline void load_checkpoint(std::istream& is, const ParameterSet& params) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const bool moments = (detail::get_u32(is) & kCheckpointAdamFlag) != 0;
  const std::uint64_t count = detail::get_u64(is);
  std::size_t matched = 0;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint64_t len = detail::get_u64(is);
    if (len > (1u << 20)) throw CheckpointError("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) {
      throw CheckpointError("checkpoint: truncated file");
    }
    const std::uint64_t rank = detail::get_u64(is);
    if (rank > 16) throw CheckpointError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(is);
    Tensor value(shape);
    detail::get_f64s(is, value.data());
    Tensor m, v;
    std::uint64_t step = 0;
    if (moments) {
      m = Tensor(shape);
      v = Tensor(shape);
      detail::get_f64s(is, m.data());
      detail::get_f64s(is, v.data());
      step = detail::get_u64(is);
    }
    Parameter* p = params.find(name);
    if (!p) throw CheckpointError("checkpoint: unexpected parameter " + name);
    if (p->value.shape() != shape) {
      throw CheckpointError("checkpoint: shape mismatch for " + name + ": file " + to_string(shape) +
                            ", model " + to_string(p->value.shape()));
    }
    p->value = std::move(value);
    if (moments) {
      p->adam_m = std::move(m);
      p->adam_v = std::move(v);
      p->step_count = step;
    }
    ++matched;
  }
  if (matched != params.items().size()) {
    throw CheckpointError("checkpoint: file has " + std::to_string(matched) + " of " +
                          std::to_string(params.items().size()) + " model parameters");
  }
}

inline void load_checkpoint(const std::string& path, const ParameterSet& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  load_checkpoint(is, params);
}

}  // namespace acpnet
