#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tokrec {

/// Index into a vocabulary. Token 0 is an ordinary token; it doubles as the
/// zero-init filler of the recycle matrix without being a sentinel.
using TokenId = std::uint32_t;

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed on-disk data: bad magic, version, dimensions, truncation.
/// The message names the offending field.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Hot-start matrix whose dimensions do not match the requested ones.
struct IncompatibleMatrixError : std::runtime_error {
  explicit IncompatibleMatrixError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace rng {

// splitmix64 finalizer; the whole engine is counter based so that any draw
// can be reproduced from (seed, index) alone.
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

inline std::uint64_t draw_u64(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed + 0x9E3779B97F4A7C15ull * (index + 1));
}

/// Uniform double in [0, 1), fully determined by (seed, index).
inline double unit_uniform(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(draw_u64(seed, index) >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, bound), bound >= 1.
inline std::uint64_t bounded(std::uint64_t seed, std::uint64_t index, std::uint64_t bound) {
  return draw_u64(seed, index) % bound;
}

/// Stateful stream over the same generator, for callers that just want a
/// sequence of draws.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t next_u64() { return draw_u64(seed_, index_++); }
  std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t seed_;
  std::uint64_t index_ = 0;
};

}  // namespace rng

namespace io {

// Little-endian scalar I/O, written byte by byte so files are identical
// across hosts.

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFull));
  write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t read_u32(std::istream& in, const std::string& field) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("truncated file while reading " + field);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& in, const std::string& field) {
  std::uint64_t lo = read_u32(in, field);
  std::uint64_t hi = read_u32(in, field);
  return lo | (hi << 32);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, sizeof(bits));
  write_u64(out, bits);
}

inline double read_f64(std::istream& in, const std::string& field) {
  std::uint64_t bits = read_u64(in, field);
  double v;
  __builtin_memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const std::string& what) {
  char got[4];
  if (!in.read(got, 4)) {
    throw FormatError("truncated file while reading " + what + " magic");
  }
  if (got[0] != magic[0] || got[1] != magic[1] || got[2] != magic[2] || got[3] != magic[3]) {
    throw FormatError("bad magic for " + what + " file");
  }
}

}  // namespace io

}  // namespace tokrec
