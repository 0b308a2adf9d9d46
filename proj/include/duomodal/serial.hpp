#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "duomodal/errors.hpp"

namespace duomodal {

// Little-endian binary file helpers shared by the DMF1 / DMC1 / DMS1 formats.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    write_bytes(os, buf, sizeof(T));
  } else {
    write_bytes(os, &v, sizeof(T));
  }
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le(os, bits);
}

inline void write_f32_array(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(os, p, n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) write_f32(os, p[i]);
  }
}

inline void read_bytes(std::istream& is, void* p, std::size_t n,
                       const std::string& ctx) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw_data("unexpected end of file while reading " + ctx);
}

template <typename T>
T read_le(std::istream& is, const std::string& ctx) {
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T), ctx);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline float read_f32(std::istream& is, const std::string& ctx) {
  const std::uint32_t bits = read_le<std::uint32_t>(is, ctx);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void read_f32_array(std::istream& is, float* p, std::size_t n,
                           const std::string& ctx) {
  if constexpr (std::endian::native == std::endian::little) {
    read_bytes(is, p, n * 4, ctx);
  } else {
    for (std::size_t i = 0; i < n; ++i) p[i] = read_f32(is, ctx);
  }
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const std::string& ctx) {
  char buf[4];
  read_bytes(is, buf, 4, ctx + " magic");
  if (std::memcmp(buf, magic, 4) != 0)
    throw_data("bad magic in " + ctx + ": expected \"" +
               std::string(magic, 4) + "\", got \"" + std::string(buf, 4) +
               "\"");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw_data("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data("cannot open for reading: " + path);
  return is;
}

// FNV-1a over raw bytes; used for store entry checksums and scope hashing.
inline std::uint64_t hash_bytes(const void* data, std::size_t n,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace duomodal
