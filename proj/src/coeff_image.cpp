#include "jes/coeff_image.hpp"

#include <algorithm>
#include <sstream>

#include "jes/error.hpp"

namespace jes {

VliCode vli_encode(int32_t value) {
  require(value != 0, ErrorKind::contract, "vli_encode of zero");
  int64_t m = value < 0 ? -int64_t(value) : value;
  require(m <= 32767, ErrorKind::range, "vli magnitude overflow");
  uint8_t g = vli_group(value);
  // Negative values store the one's complement of |v|.
  uint64_t code = value > 0 ? uint64_t(value) : uint64_t((int64_t(value) + (int64_t(1) << g)) - 1);
  return VliCode{g, BitString::from_uint(code, g)};
}

int32_t vli_decode(const VliCode& code) {
  require(code.bits.size() == code.group, ErrorKind::format, "vli length mismatch");
  if (code.group == 0) return 0;
  uint64_t c = code.bits.to_uint();
  if (c >= (uint64_t(1) << (code.group - 1))) return int32_t(c);
  return int32_t(int64_t(c) - (int64_t(1) << code.group) + 1);
}

std::pair<std::vector<RvPair>, bool> pairs_from_zigzag(const std::array<int16_t, 63>& ac) {
  std::vector<RvPair> pairs;
  int run = 0;
  for (int16_t v : ac) {
    if (v == 0) {
      ++run;
      continue;
    }
    while (run >= 16) {
      pairs.push_back(RvPair{15, 0});
      run -= 16;
    }
    pairs.push_back(RvPair{uint8_t(run), v});
    run = 0;
  }
  return {std::move(pairs), run > 0};
}

std::array<int16_t, 63> zigzag_from_pairs(const std::vector<RvPair>& pairs, bool eob_present) {
  std::array<int16_t, 63> ac{};
  int k = 0;
  for (const auto& p : pairs) {
    require(k + p.span() <= 63, ErrorKind::format, "pair list overflows 63 coefficients");
    k += p.run;
    ac[k++] = p.value;
  }
  require(eob_present == (k < 63), ErrorKind::format, "eob flag inconsistent with span");
  return ac;
}

void validate_block(const Block& b) {
  int span = 0;
  for (const auto& p : b.pairs) {
    require(p.run <= 15, ErrorKind::format, "run out of range");
    require(p.value != 0 || p.is_zrl(), ErrorKind::format, "zero value outside ZRL");
    span += p.span();
  }
  require(span <= 63, ErrorKind::format, "block spans more than 63 coefficients");
  require(b.eob_present == (span < 63), ErrorKind::format, "eob flag inconsistent with span");
  require(b.dc.bits.size() == b.dc.group, ErrorKind::format, "dc code length mismatch");
}

int CoeffImage::max_h() const {
  return std::max({comps[0].h_samp, comps[1].h_samp, comps[2].h_samp});
}
int CoeffImage::max_v() const {
  return std::max({comps[0].v_samp, comps[1].v_samp, comps[2].v_samp});
}
int CoeffImage::mcus_x() const { return (width + 8 * max_h() - 1) / (8 * max_h()); }
int CoeffImage::mcus_y() const { return (height + 8 * max_v() - 1) / (8 * max_v()); }

std::string dump_coeff_image(const CoeffImage& img) {
  std::ostringstream os;
  for (int c = 0; c < 3; ++c) {
    const auto& comp = img.comps[c];
    for (size_t j = 0; j < comp.blocks.size(); ++j) {
      const Block& b = comp.blocks[j];
      os << component_name(c) << ' ' << j << " g=" << int(b.dc.group)
         << " dc=" << b.dc.bits.to_string() << " pairs=[";
      for (size_t i = 0; i < b.pairs.size(); ++i) {
        if (i) os << ' ';
        os << '(' << int(b.pairs[i].run) << ',' << b.pairs[i].value << ')';
      }
      os << "] eob=" << (b.eob_present ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

}  // namespace jes
