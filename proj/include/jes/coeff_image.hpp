#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "jes/vli.hpp"

namespace jes {

// One run-length pair of the AC coefficient scan. The two sentinel forms keep
// v = 0: (15,0) is ZRL (a run of 16 zeros); the terminal EOB (0,0) is not
// stored as a pair, blocks carry it as a flag instead.
struct RvPair {
  uint8_t run = 0;    // zeros preceding the value, 0..15
  int16_t value = 0;  // nonzero AC value except in ZRL

  bool is_zrl() const { return run == 15 && value == 0; }
  // Zig-zag positions this pair occupies.
  int span() const { return run + 1; }

  bool operator==(const RvPair&) const = default;
};

struct Block {
  VliCode dc;  // DC difference code in original scan order, bits verbatim
  std::vector<RvPair> pairs;  // excludes the terminal EOB
  bool eob_present = true;

  int coeff_span() const {
    int s = 0;
    for (const auto& p : pairs) s += p.span();
    return s;
  }

  bool operator==(const Block&) const = default;
};

struct QuantTable {
  bool defined = false;
  uint8_t precision = 0;              // 0: 8-bit entries, 1: 16-bit
  std::array<uint16_t, 64> q{};       // zig-zag order as stored in DQT

  bool operator==(const QuantTable&) const = default;
};

struct HuffTable {
  bool defined = false;
  std::array<uint8_t, 16> counts{};   // codes per length 1..16
  std::vector<uint8_t> symbols;       // in code order

  bool operator==(const HuffTable&) const = default;
};

struct Component {
  uint8_t id = 0;       // identifier from SOF
  int h_samp = 1;       // horizontal sampling factor
  int v_samp = 1;
  int quant_idx = 0;    // DQT destination
  int dc_tbl = 0;       // DHT destinations from SOS
  int ac_tbl = 0;
  int width_blocks = 0;   // grid including MCU padding blocks
  int height_blocks = 0;
  std::vector<Block> blocks;  // raster order over the padded grid

  int block_count() const { return width_blocks * height_blocks; }

  bool operator==(const Component&) const = default;
};

// Parsed baseline JPEG in the coefficient domain: exactly the structures the
// cipher permutes and substitutes, plus everything needed to re-encode.
struct CoeffImage {
  uint16_t width = 0;
  uint16_t height = 0;
  std::array<Component, 3> comps;  // Y, U, V in frame order
  std::array<QuantTable, 4> quant;
  std::array<HuffTable, 4> huff_dc;
  std::array<HuffTable, 4> huff_ac;
  // APPn/COM segments preserved verbatim: (marker byte, payload).
  std::vector<std::pair<uint8_t, std::vector<uint8_t>>> app_segments;

  int max_h() const;
  int max_v() const;
  int mcus_x() const;
  int mcus_y() const;

  bool operator==(const CoeffImage&) const = default;
};

inline const char* component_name(int c) { return c == 0 ? "Y" : (c == 1 ? "U" : "V"); }

// Run-length encoding of one block's 63 zig-zag AC values and its inverse.
std::pair<std::vector<RvPair>, bool> pairs_from_zigzag(const std::array<int16_t, 63>& ac);
std::array<int16_t, 63> zigzag_from_pairs(const std::vector<RvPair>& pairs, bool eob_present);

// Structural validation of the pair-list invariants (spans, sentinel forms).
void validate_block(const Block& b);

// Debug dump, one block per line: component, index, g_DC, dc bits, pair list.
std::string dump_coeff_image(const CoeffImage& img);

}  // namespace jes
