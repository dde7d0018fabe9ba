#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "jes/coeff_image.hpp"

namespace jes {

// Decodes a baseline sequential, Huffman-coded, 3-component JPEG (4:4:4 or
// 4:2:0, no restart markers) into the coefficient model. DC differences stay
// differences; their code bits are carried verbatim with each block.
CoeffImage decode_jpeg(std::span<const uint8_t> bytes);

// Re-encodes to a standards-conformant baseline JPEG using the preserved
// tables. A table slot missing a needed code is swapped for the standard
// Annex-K table of its class.
std::vector<uint8_t> encode_jpeg(const CoeffImage& img);

// Standard Annex-K tables (luma index 0, chroma index 1).
const HuffTable& annex_k_dc(int chroma);
const HuffTable& annex_k_ac(int chroma);

}  // namespace jes
