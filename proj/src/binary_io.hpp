#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "prunerzero/errors.hpp"

namespace prunerzero::io {

// Little-endian scalar encoding, independent of the host byte order.
template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    end_ = in_.tellg();
    in_.seekg(here);
  }

  /// Fails fast when a header claims more payload than the file holds.
  void require(std::uint64_t bytes) {
    const auto left = static_cast<std::uint64_t>(end_ - in_.tellg());
    if (bytes > left) throw FormatError(what_ + ": truncated file");
  }

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    std::array<unsigned char, sizeof(T)> bytes;
    read_raw(bytes.data(), bytes.size());
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t len) {
    std::string s(len, '\0');
    read_raw(s.data(), len);
    return s;
  }

  void read_raw(void* dst, std::size_t len) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(in_.gcount()) != len) throw FormatError(what_ + ": truncated file");
  }

  void expect_magic(const char (&magic)[5]) {
    char got[4];
    read_raw(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
      throw FormatError(what_ + ": bad magic, expected '" + std::string(magic, 4) + "'");
    }
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes");
  }

 private:
  std::istream& in_;
  std::string what_;
  std::streampos end_;
};

}  // namespace prunerzero::io
