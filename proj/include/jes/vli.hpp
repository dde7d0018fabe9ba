#pragma once

#include <cstdint>

#include "jes/bits.hpp"

namespace jes {

// Variable-length-integer code: a magnitude class (= bit count) plus the code
// bits. Positive values use their natural binary form, negative values the
// one's complement of |v|.
struct VliCode {
  uint8_t group = 0;  // number of bits
  BitString bits;

  bool operator==(const VliCode&) const = default;
};

// Magnitude class of a nonzero value: bit length of |v|.
inline uint8_t vli_group(int32_t value) {
  uint32_t m = value < 0 ? uint32_t(-int64_t(value)) : uint32_t(value);
  uint8_t g = 0;
  while (m) {
    ++g;
    m >>= 1;
  }
  return g;
}

VliCode vli_encode(int32_t value);
int32_t vli_decode(const VliCode& code);

}  // namespace jes
