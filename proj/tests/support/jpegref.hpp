#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace jes::test {

// Independent reference decode via libjpeg. Never used by jes_core; this is
// the oracle the codec and cipher outputs are checked against.

// True if libjpeg fully decompresses the bytes without errors.
bool ref_decodes_ok(const std::vector<uint8_t>& jpeg);

// Full decompression to RGB; throws on decode failure.
struct RefPixels {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;
  bool operator==(const RefPixels&) const = default;
};
RefPixels ref_decompress(const std::vector<uint8_t>& jpeg);

// Quantized DCT coefficients per component in block-raster order, each block
// 64 values in natural (row-major) order, DC undifferenced.
struct RefCoeffs {
  struct Comp {
    int width_blocks = 0;
    int height_blocks = 0;
    std::vector<std::array<int16_t, 64>> blocks;
  };
  std::vector<Comp> comps;
};
RefCoeffs ref_read_coefficients(const std::vector<uint8_t>& jpeg);

}  // namespace jes::test
