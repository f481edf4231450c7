#pragma once

#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <bit>
#include <cstring>
#include <type_traits>
#include <span>
#include <vector>

#include "uq/errors.hpp"

namespace uq {

/// MSB-first bit packer.
class BitWriter {
 public:
  void put(std::uint64_t value, unsigned width) {
    for (unsigned i = width; i-- > 0;) put_bit((value >> i) & 1u);
  }

  void put_bit(bool bit) {
    if (used_ == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> used_);
    used_ = (used_ + 1) & 7u;
  }

  /// Pad the current byte with zero bits.
  void align() { used_ = 0; }

  std::size_t bit_count() const { return bytes_.size() * 8 - (used_ ? 8 - used_ : 0); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { used_ = 0; return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  unsigned used_ = 0;
};

/// MSB-first bit reader over a borrowed buffer. Reading past the end is a
/// FormatError.
class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t get(unsigned width) {
    if (width > 64) throw FormatError("bit field wider than 64 bits");
    if (remaining() < width) throw FormatError("truncated bit stream");
    std::uint64_t v = 0;
    for (unsigned i = 0; i < width; ++i) v = (v << 1) | get_bit_unchecked();
    return v;
  }

  void align() { pos_ = (pos_ + 7) & ~std::size_t{7}; }

  std::size_t remaining() const {
    const std::size_t total = bytes_.size() * 8;
    return pos_ >= total ? 0 : total - pos_;
  }
  std::size_t byte_position() const { return (pos_ + 7) / 8; }

 private:
  unsigned get_bit_unchecked() {
    const unsigned b = (bytes_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1u;
    ++pos_;
    return b;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Little-endian scalar helpers for file headers.
namespace le {

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> in, std::size_t& offset) {
  if (offset + sizeof(T) > in.size()) throw FormatError("truncated header");
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  offset += sizeof(T);
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace le

}  // namespace uq
