#pragma once

// Little-endian primitives shared by all binary file formats (network checkpoints,
// replay buffers). Every multi-byte value on disk is little-endian; doubles are
// stored as their IEEE-754 bit pattern.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "surq/errors.hpp"

namespace surq::io {

namespace detail {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
}

}  // namespace detail

template <class U>
void write_uint(std::ostream& os, U value) {
  const U le = detail::to_little(value);
  os.write(reinterpret_cast<const char*>(&le), sizeof(U));
}

template <class U>
U read_uint(std::istream& is) {
  U le{};
  is.read(reinterpret_cast<char*>(&le), sizeof(U));
  if (!is) throw FormatError("unexpected end of file");
  return detail::to_little(le);
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_uint(os, v); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_uint(os, v); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_uint(os, v); }
inline void write_i32(std::ostream& os, std::int32_t v) {
  write_uint(os, std::bit_cast<std::uint32_t>(v));
}
inline void write_f64(std::ostream& os, double v) { write_uint(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint8_t read_u8(std::istream& is) { return read_uint<std::uint8_t>(is); }
inline std::uint32_t read_u32(std::istream& is) { return read_uint<std::uint32_t>(is); }
inline std::uint64_t read_u64(std::istream& is) { return read_uint<std::uint64_t>(is); }
inline std::int32_t read_i32(std::istream& is) {
  return std::bit_cast<std::int32_t>(read_uint<std::uint32_t>(is));
}
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_uint<std::uint64_t>(is)); }

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) {
    throw FormatError("bad magic tag, expected '" + std::string(magic) + "'");
  }
}

}  // namespace surq::io
