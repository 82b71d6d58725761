#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "hasnets/errors.hpp"

namespace hasnets::io {

// Little-endian fixed-width encoding, independent of host byte order.

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

/// Reader that tracks the byte offset for error reporting.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint64_t offset() const noexcept { return offset_; }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError(std::string("truncated input while reading ") + what,
                       offset_ + static_cast<std::uint64_t>(in_.gcount()));
    }
    offset_ += n;
  }

  std::uint64_t u64(const char* what) {
    unsigned char buf[8];
    bytes(reinterpret_cast<char*>(buf), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }

  std::uint32_t u32_be(const char* what) {
    unsigned char buf[4];
    bytes(reinterpret_cast<char*>(buf), 4, what);
    return (std::uint32_t{buf[0]} << 24) | (std::uint32_t{buf[1]} << 16) |
           (std::uint32_t{buf[2]} << 8) | std::uint32_t{buf[3]};
  }

  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  void magic(const char (&expected)[5], const char* what) {
    char buf[4];
    bytes(buf, 4, what);
    if (std::memcmp(buf, expected, 4) != 0) {
      throw ParseError(std::string("bad magic for ") + what + ", expected '" + expected + "'", 0);
    }
  }

  /// True when nothing is left to read.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace hasnets::io
