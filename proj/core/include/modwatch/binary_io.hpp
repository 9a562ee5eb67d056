#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "modwatch/error.hpp"

// Little-endian primitives shared by the checkpoint (MWCK) and tensor (MWTS)
// containers. Floats are written as their IEEE-754 bit patterns.
namespace modwatch::io {

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  os.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw DataError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::size_t limit = 1u << 24) {
  const auto n = read_le<std::uint32_t>(is);
  if (n > limit) throw DataError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw DataError("unexpected end of file in string");
  return s;
}

inline void write_floats(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (std::size_t b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void read_floats(std::istream& is, std::span<float> out) {
  std::vector<unsigned char> buf(out.size() * 4);
  if (!buf.empty() && !is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw DataError("unexpected end of file in float block");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char got[4] = {};
  if (!is.read(got, 4) || std::string(got, 4) != std::string(magic, 4)) {
    throw DataError(what + ": bad magic bytes (expected " + std::string(magic, 4) + ")");
  }
}

}  // namespace modwatch::io
