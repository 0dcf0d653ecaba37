#pragma once

// Little-endian scalar IO shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dccmvc::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_le(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw std::runtime_error(std::string("unexpected end of file while reading ") + what);
  }
  return value;
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4] = {};
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic: expected \"") + magic + "\"");
  }
}

}  // namespace dccmvc::detail
