#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "sda/error.hpp"

namespace sda::binary {

// Little-endian primitive encoding independent of host byte order.

template <typename U>
void write_uint(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t k = 0; k < sizeof(U); ++k) buf[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <typename U>
U read_uint(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw IoError("unexpected end of file");
  U v = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) v |= static_cast<U>(buf[k]) << (8 * k);
  return v;
}

inline void write_f32(std::ostream& os, float v) { write_uint<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_uint<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_uint<std::uint32_t>(is)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_uint<std::uint64_t>(is)); }

inline void write_string16(std::ostream& os, const std::string& s) {
  if (s.size() > 0xFFFF) throw IoError("string too long for u16 length prefix");
  write_uint<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string16(std::istream& is) {
  const auto n = read_uint<std::uint16_t>(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("unexpected end of file in string");
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw IoError(std::string("bad magic, expected '") + magic + "'");
}

}  // namespace sda::binary
