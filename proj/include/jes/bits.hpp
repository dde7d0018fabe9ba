#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jes/error.hpp"

namespace jes {

// Bit string with MSB-first semantics: bit 0 is the most significant bit of
// the value the string denotes. DC difference codes, stream-cipher output and
// XOR masks all use this type.
class BitString {
 public:
  BitString() = default;
  explicit BitString(std::vector<bool> bits) : bits_(std::move(bits)) {}

  static BitString from_string(std::string_view s) {
    std::vector<bool> b;
    b.reserve(s.size());
    for (char c : s) {
      require(c == '0' || c == '1', ErrorKind::format, "bit string literal");
      b.push_back(c == '1');
    }
    return BitString(std::move(b));
  }

  // Low `n` bits of `value`, MSB first.
  static BitString from_uint(uint64_t value, size_t n) {
    require(n <= 64, ErrorKind::range, "bit count");
    std::vector<bool> b(n);
    for (size_t i = 0; i < n; ++i) b[i] = (value >> (n - 1 - i)) & 1u;
    return BitString(std::move(b));
  }

  size_t size() const { return bits_.size(); }
  bool empty() const { return bits_.empty(); }
  bool operator[](size_t i) const { return bits_[i]; }
  void push_back(bool b) { bits_.push_back(b); }

  uint64_t to_uint() const {
    require(size() <= 64, ErrorKind::range, "bit string too long for uint");
    uint64_t v = 0;
    for (bool b : bits_) v = (v << 1) | (b ? 1u : 0u);
    return v;
  }

  std::string to_string() const {
    std::string s;
    s.reserve(size());
    for (bool b : bits_) s.push_back(b ? '1' : '0');
    return s;
  }

  // Zero-extends on the most-significant side to length n (n >= size()).
  BitString zext(size_t n) const {
    require(n >= size(), ErrorKind::range, "zext shrinks");
    std::vector<bool> b(n, false);
    std::copy(bits_.begin(), bits_.end(), b.begin() + (n - size()));
    return BitString(std::move(b));
  }

  // Trailing (least significant) k bits.
  BitString low_bits(size_t k) const {
    require(k <= size(), ErrorKind::range, "low_bits over length");
    return BitString(std::vector<bool>(bits_.end() - k, bits_.end()));
  }

  BitString operator^(const BitString& o) const {
    require(size() == o.size(), ErrorKind::contract, "xor length mismatch");
    std::vector<bool> b(size());
    for (size_t i = 0; i < size(); ++i) b[i] = bits_[i] != o.bits_[i];
    return BitString(std::move(b));
  }

  // Left-rotates the bit sequence by k positions.
  BitString rotl(size_t k) const {
    if (empty()) return {};
    k %= size();
    std::vector<bool> b(bits_.begin() + k, bits_.end());
    b.insert(b.end(), bits_.begin(), bits_.begin() + k);
    return BitString(std::move(b));
  }

  bool operator==(const BitString& o) const = default;

  // Packs to bytes, MSB first, zero-padded at the tail. Used for hashing and
  // serialization together with the explicit bit count.
  std::vector<uint8_t> packed() const {
    std::vector<uint8_t> out((size() + 7) / 8, 0);
    for (size_t i = 0; i < size(); ++i)
      if (bits_[i]) out[i / 8] |= uint8_t(0x80u >> (i % 8));
    return out;
  }

  static BitString unpack(const std::vector<uint8_t>& bytes, size_t nbits) {
    require(bytes.size() == (nbits + 7) / 8, ErrorKind::format, "packed bit length");
    std::vector<bool> b(nbits);
    for (size_t i = 0; i < nbits; ++i) b[i] = (bytes[i / 8] >> (7 - i % 8)) & 1u;
    return BitString(std::move(b));
  }

 private:
  std::vector<bool> bits_;
};

}  // namespace jes
