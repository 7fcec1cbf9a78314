#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "pgn/errors.hpp"

namespace pgn::io {

enum class Endian { Little, Big };

/// Appends fixed-width values to a byte buffer in the requested byte order.
class ByteWriter {
 public:
  explicit ByteWriter(Endian order) : order_(order) {}

  void bytes(std::string_view raw) { buffer_.insert(buffer_.end(), raw.begin(), raw.end()); }

  void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::string& buffer() const noexcept { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const std::size_t shift = order_ == Endian::Little ? i : sizeof(U) - 1 - i;
      buffer_.push_back(static_cast<char>((v >> (8 * shift)) & 0xFFu));
    }
  }

  Endian order_;
  std::string buffer_;
};

/// Bounds-checked cursor over a byte buffer. Reads past the end throw
/// LengthError naming `what`.
class ByteReader {
 public:
  ByteReader(std::string_view data, Endian order, std::string what)
      : data_(data), order_(order), what_(std::move(what)) {}

  std::string_view bytes(std::size_t n) {
    require(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::string string() {
    const auto n = u32();
    return std::string(bytes(n));
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  void require(std::size_t n) const {
    if (remaining() < n) {
      throw LengthError(what_ + ": need " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", only " + std::to_string(remaining()) +
                        " remain");
    }
  }

 private:
  template <typename U>
  U get() {
    auto raw = bytes(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const std::size_t shift = order_ == Endian::Little ? i : sizeof(U) - 1 - i;
      v |= static_cast<U>(static_cast<unsigned char>(raw[i])) << (8 * shift);
    }
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  Endian order_;
  std::string what_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// 64-bit FNV-1a, used for configuration and file fingerprints.
std::uint64_t fnv1a(std::string_view bytes);

std::string hex64(std::uint64_t value);

}  // namespace pgn::io
