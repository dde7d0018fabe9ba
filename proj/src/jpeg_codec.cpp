#include "jes/jpeg_codec.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include "jes/error.hpp"

namespace jes {

namespace {

constexpr uint8_t kSOI = 0xD8, kEOI = 0xD9, kSOS = 0xDA, kDQT = 0xDB, kDHT = 0xC4,
                  kDRI = 0xDD, kCOM = 0xFE, kSOF0 = 0xC0;

bool is_app(uint8_t m) { return m >= 0xE0 && m <= 0xEF; }
bool is_sof(uint8_t m) {
  return (m >= 0xC0 && m <= 0xCF) && m != 0xC4 && m != 0xC8 && m != 0xCC;
}
bool is_rst(uint8_t m) { return m >= 0xD0 && m <= 0xD7; }

// ---------------------------------------------------------------------------
// Huffman code derivation (Annex C) and decoding tables (Annex F).

struct HuffEncoder {
  // code/size per symbol value
  std::array<uint16_t, 256> code{};
  std::array<uint8_t, 256> size{};

  explicit HuffEncoder(const HuffTable& t) {
    uint16_t c = 0;
    size_t k = 0;
    for (int l = 1; l <= 16; ++l) {
      for (int i = 0; i < t.counts[l - 1]; ++i) {
        uint8_t sym = t.symbols[k++];
        code[sym] = c++;
        size[sym] = uint8_t(l);
      }
      c <<= 1;
    }
  }

  bool has(uint8_t sym) const { return size[sym] != 0; }
};

struct HuffDecoder {
  std::array<int32_t, 17> mincode{};
  std::array<int32_t, 17> maxcode{};  // -1 where no codes of that length
  std::array<int32_t, 17> valptr{};
  const std::vector<uint8_t>* symbols = nullptr;

  explicit HuffDecoder(const HuffTable& t) : symbols(&t.symbols) {
    int32_t code = 0;
    int32_t k = 0;
    for (int l = 1; l <= 16; ++l) {
      if (t.counts[l - 1] == 0) {
        maxcode[l] = -1;
      } else {
        valptr[l] = k;
        mincode[l] = code;
        k += t.counts[l - 1];
        code += t.counts[l - 1];
        maxcode[l] = code - 1;
      }
      code <<= 1;
    }
  }
};

// Table coverage check: every symbol a table would need to emit has a code?
bool covers(const HuffTable& t, const std::vector<uint8_t>& needed) {
  HuffEncoder e(t);
  return std::all_of(needed.begin(), needed.end(), [&](uint8_t s) { return e.has(s); });
}

// ---------------------------------------------------------------------------
// Entropy-coded segment reader with byte-stuffing removal.

class EntropyReader {
 public:
  EntropyReader(std::span<const uint8_t> data, size_t base_offset)
      : data_(data), base_(base_offset) {}

  int next_bit() {
    if (bit_pos_ == 0) {
      if (!advance_byte()) return -1;
    }
    int bit = (cur_ >> (7 - bit_pos_)) & 1;
    bit_pos_ = (bit_pos_ + 1) % 8;
    return bit;
  }

  uint32_t receive(int n) {
    uint32_t v = 0;
    for (int i = 0; i < n; ++i) {
      int b = next_bit();
      if (b < 0) throw ParseError("entropy data truncated", offset());
      v = (v << 1) | uint32_t(b);
    }
    return v;
  }

  // Bytes consumed from the segment start (for error reporting).
  size_t offset() const { return base_ + pos_; }
  size_t pos() const { return pos_; }

 private:
  bool advance_byte() {
    if (pos_ >= data_.size()) return false;
    uint8_t b = data_[pos_];
    if (b == 0xFF) {
      if (pos_ + 1 >= data_.size()) return false;
      uint8_t m = data_[pos_ + 1];
      if (m == 0x00) {
        cur_ = 0xFF;
        pos_ += 2;
        return true;
      }
      // Any real marker terminates the scan data.
      return false;
    }
    cur_ = b;
    ++pos_;
    return true;
  }

  std::span<const uint8_t> data_;
  size_t base_;
  size_t pos_ = 0;
  uint8_t cur_ = 0;
  int bit_pos_ = 0;
};

int decode_symbol(EntropyReader& r, const HuffDecoder& h) {
  int32_t code = r.next_bit();
  if (code < 0) throw ParseError("entropy data truncated in huffman code", r.offset());
  int l = 1;
  while (code > h.maxcode[l]) {
    int b = r.next_bit();
    if (b < 0) throw ParseError("entropy data truncated in huffman code", r.offset());
    code = (code << 1) | b;
    if (++l > 16) throw ParseError("invalid huffman code", r.offset());
  }
  return (*h.symbols)[size_t(h.valptr[l] + code - h.mincode[l])];
}

// ---------------------------------------------------------------------------
// Marker-level parser.

class Parser {
 public:
  explicit Parser(std::span<const uint8_t> bytes) : b_(bytes) {}

  CoeffImage run() {
    require_marker(kSOI, "missing SOI");
    bool have_sof = false;
    for (;;) {
      uint8_t m = next_marker();
      if (m == kSOS) {
        require(have_sof, ErrorKind::parse, "SOS before SOF");
        parse_sos();
        decode_scan();
        // Anything after the scan except EOI (e.g. another SOS) is out of the
        // supported subset.
        uint8_t e = next_marker();
        if (e != kEOI)
          fail(ErrorKind::unsupported_format, "multi-scan or trailing segments unsupported");
        return std::move(img_);
      }
      if (m == kEOI) throw ParseError("EOI before scan data", pos_);
      if (is_sof(m)) {
        if (m != kSOF0)
          fail(ErrorKind::unsupported_format,
               "only baseline sequential huffman JPEG is supported");
        parse_sof0();
        have_sof = true;
        continue;
      }
      switch (m) {
        case kDQT: parse_dqt(); break;
        case kDHT: parse_dht(); break;
        case kDRI: parse_dri(); break;
        case kCOM: skip_preserved(m); break;
        default:
          if (is_app(m)) {
            skip_preserved(m);
          } else if (is_rst(m)) {
            fail(ErrorKind::unsupported_format, "restart markers unsupported");
          } else {
            throw ParseError("unexpected marker " + std::to_string(m), pos_);
          }
      }
    }
  }

 private:
  uint8_t u8() {
    if (pos_ >= b_.size()) throw ParseError("unexpected end of stream", pos_);
    return b_[pos_++];
  }
  uint16_t u16() {
    uint16_t hi = u8();
    return uint16_t((hi << 8) | u8());
  }

  void require_marker(uint8_t m, const char* what) {
    if (u8() != 0xFF || u8() != m) throw ParseError(what, pos_ - 2);
  }

  uint8_t next_marker() {
    uint8_t b = u8();
    if (b != 0xFF) throw ParseError("expected marker", pos_ - 1);
    uint8_t m = u8();
    while (m == 0xFF) m = u8();  // fill bytes
    return m;
  }

  std::span<const uint8_t> segment_payload() {
    uint16_t len = u16();
    if (len < 2 || pos_ + len - 2 > b_.size())
      throw ParseError("segment length out of bounds", pos_ - 2);
    auto seg = b_.subspan(pos_, len - 2);
    pos_ += len - 2;
    return seg;
  }

  void skip_preserved(uint8_t m) {
    auto seg = segment_payload();
    img_.app_segments.emplace_back(m, std::vector<uint8_t>(seg.begin(), seg.end()));
  }

  void parse_dqt() {
    auto seg = segment_payload();
    size_t i = 0;
    while (i < seg.size()) {
      uint8_t pq = seg[i] >> 4, tq = seg[i] & 0x0F;
      ++i;
      require(tq < 4 && pq < 2, ErrorKind::parse, "bad DQT header");
      QuantTable& t = img_.quant[tq];
      t.defined = true;
      t.precision = pq;
      size_t need = pq ? 128 : 64;
      require(i + need <= seg.size(), ErrorKind::parse, "DQT truncated");
      for (int k = 0; k < 64; ++k) {
        t.q[k] = pq ? uint16_t((seg[i] << 8) | seg[i + 1]) : seg[i];
        i += pq ? 2 : 1;
      }
    }
  }

  void parse_dht() {
    auto seg = segment_payload();
    size_t i = 0;
    while (i < seg.size()) {
      require(i + 17 <= seg.size(), ErrorKind::parse, "DHT truncated");
      uint8_t tc = seg[i] >> 4, th = seg[i] & 0x0F;
      ++i;
      require(tc < 2 && th < 4, ErrorKind::parse, "bad DHT header");
      HuffTable t;
      t.defined = true;
      size_t total = 0;
      for (int l = 0; l < 16; ++l) {
        t.counts[l] = seg[i + l];
        total += t.counts[l];
      }
      i += 16;
      require(i + total <= seg.size(), ErrorKind::parse, "DHT symbols truncated");
      t.symbols.assign(seg.begin() + i, seg.begin() + i + total);
      i += total;
      (tc == 0 ? img_.huff_dc : img_.huff_ac)[th] = std::move(t);
    }
  }

  void parse_dri() {
    auto seg = segment_payload();
    require(seg.size() == 2, ErrorKind::parse, "bad DRI");
    uint16_t interval = uint16_t((seg[0] << 8) | seg[1]);
    if (interval != 0) fail(ErrorKind::unsupported_format, "restart intervals unsupported");
  }

  void parse_sof0() {
    auto seg = segment_payload();
    require(seg.size() >= 6, ErrorKind::parse, "SOF0 truncated");
    uint8_t precision = seg[0];
    if (precision != 8) fail(ErrorKind::unsupported_format, "only 8-bit precision supported");
    img_.height = uint16_t((seg[1] << 8) | seg[2]);
    img_.width = uint16_t((seg[3] << 8) | seg[4]);
    require(img_.width > 0 && img_.height > 0, ErrorKind::parse, "zero image dimension");
    uint8_t nf = seg[5];
    if (nf != 3) fail(ErrorKind::unsupported_format, "exactly 3 components required");
    require(seg.size() >= size_t(6 + 3 * nf), ErrorKind::parse, "SOF0 component data truncated");
    for (int c = 0; c < 3; ++c) {
      Component& comp = img_.comps[c];
      comp.id = seg[6 + 3 * c];
      comp.h_samp = seg[7 + 3 * c] >> 4;
      comp.v_samp = seg[7 + 3 * c] & 0x0F;
      comp.quant_idx = seg[8 + 3 * c];
      require(comp.quant_idx < 4, ErrorKind::parse, "bad quant index");
    }
    bool s444 = true, s420 = img_.comps[0].h_samp == 2 && img_.comps[0].v_samp == 2;
    for (int c = 0; c < 3; ++c) {
      if (img_.comps[c].h_samp != 1 || img_.comps[c].v_samp != 1) s444 = false;
      if (c > 0 && (img_.comps[c].h_samp != 1 || img_.comps[c].v_samp != 1)) s420 = false;
    }
    if (!s444 && !s420)
      fail(ErrorKind::unsupported_format, "only 4:4:4 and 4:2:0 sampling supported");
    for (int c = 0; c < 3; ++c) {
      Component& comp = img_.comps[c];
      comp.width_blocks = img_.mcus_x() * comp.h_samp;
      comp.height_blocks = img_.mcus_y() * comp.v_samp;
    }
  }

  void parse_sos() {
    auto seg = segment_payload();
    require(seg.size() >= 1, ErrorKind::parse, "SOS truncated");
    uint8_t ns = seg[0];
    if (ns != 3) fail(ErrorKind::unsupported_format, "single interleaved 3-component scan required");
    require(seg.size() == size_t(1 + 2 * ns + 3), ErrorKind::parse, "bad SOS length");
    for (int s = 0; s < 3; ++s) {
      uint8_t cs = seg[1 + 2 * s];
      uint8_t tables = seg[2 + 2 * s];
      bool found = false;
      for (int c = 0; c < 3; ++c) {
        if (img_.comps[c].id == cs) {
          img_.comps[c].dc_tbl = tables >> 4;
          img_.comps[c].ac_tbl = tables & 0x0F;
          require(img_.comps[c].dc_tbl < 4 && img_.comps[c].ac_tbl < 4, ErrorKind::parse,
                  "bad table selector");
          found = true;
        }
      }
      require(found, ErrorKind::parse, "scan component not in frame");
    }
    require(seg[1 + 2 * ns] == 0 && seg[2 + 2 * ns] == 63, ErrorKind::parse,
            "non-baseline spectral selection");
  }

  void decode_scan() {
    for (int c = 0; c < 3; ++c) {
      const Component& comp = img_.comps[c];
      require(img_.quant[comp.quant_idx].defined, ErrorKind::parse, "missing quant table");
      require(img_.huff_dc[comp.dc_tbl].defined && img_.huff_ac[comp.ac_tbl].defined,
              ErrorKind::parse, "missing huffman table");
      img_.comps[c].blocks.assign(size_t(comp.block_count()), Block{});
    }
    std::array<HuffDecoder, 3> dc{HuffDecoder(img_.huff_dc[img_.comps[0].dc_tbl]),
                                  HuffDecoder(img_.huff_dc[img_.comps[1].dc_tbl]),
                                  HuffDecoder(img_.huff_dc[img_.comps[2].dc_tbl])};
    std::array<HuffDecoder, 3> ac{HuffDecoder(img_.huff_ac[img_.comps[0].ac_tbl]),
                                  HuffDecoder(img_.huff_ac[img_.comps[1].ac_tbl]),
                                  HuffDecoder(img_.huff_ac[img_.comps[2].ac_tbl])};

    EntropyReader r(b_.subspan(pos_), pos_);
    for (int my = 0; my < img_.mcus_y(); ++my) {
      for (int mx = 0; mx < img_.mcus_x(); ++mx) {
        for (int c = 0; c < 3; ++c) {
          Component& comp = img_.comps[c];
          for (int by = 0; by < comp.v_samp; ++by) {
            for (int bx = 0; bx < comp.h_samp; ++bx) {
              int row = my * comp.v_samp + by;
              int col = mx * comp.h_samp + bx;
              Block& blk = comp.blocks[size_t(row) * comp.width_blocks + col];
              decode_block(r, dc[c], ac[c], blk);
            }
          }
        }
      }
    }
    pos_ += r.pos();
  }

  void decode_block(EntropyReader& r, const HuffDecoder& dc, const HuffDecoder& ac, Block& blk) {
    int t = decode_symbol(r, dc);
    if (t > 16) throw ParseError("DC category out of range", r.offset());
    BitString bits;
    for (int i = 0; i < t; ++i) {
      int b = r.next_bit();
      if (b < 0) throw ParseError("entropy data truncated in DC code", r.offset());
      bits.push_back(b != 0);
    }
    blk.dc = VliCode{uint8_t(t), std::move(bits)};

    blk.pairs.clear();
    blk.eob_present = false;
    int k = 0;
    while (k < 63) {
      int rs = decode_symbol(r, ac);
      int run = rs >> 4, size = rs & 0x0F;
      if (size == 0) {
        if (run == 0) {  // EOB
          blk.eob_present = true;
          break;
        }
        if (run == 15) {  // ZRL
          if (k + 16 > 63) throw ParseError("ZRL overruns block", r.offset());
          blk.pairs.push_back(RvPair{15, 0});
          k += 16;
          continue;
        }
        throw ParseError("invalid AC symbol", r.offset());
      }
      if (k + run + 1 > 63) throw ParseError("AC run overruns block", r.offset());
      uint32_t raw = r.receive(size);
      VliCode code{uint8_t(size), BitString::from_uint(raw, size_t(size))};
      blk.pairs.push_back(RvPair{uint8_t(run), int16_t(vli_decode(code))});
      k += run + 1;
    }
  }

  std::span<const uint8_t> b_;
  size_t pos_ = 0;
  CoeffImage img_;
};

// ---------------------------------------------------------------------------
// Encoder.

class EntropyWriter {
 public:
  explicit EntropyWriter(std::vector<uint8_t>& out) : out_(out) {}

  void put_bits(uint32_t v, int n) {
    for (int i = n - 1; i >= 0; --i) put_bit((v >> i) & 1);
  }
  void put_bitstring(const BitString& b) {
    for (size_t i = 0; i < b.size(); ++i) put_bit(b[i] ? 1 : 0);
  }
  void put_code(const HuffEncoder& h, uint8_t sym) {
    require(h.has(sym), ErrorKind::format, "symbol missing from huffman table");
    put_bits(h.code[sym], h.size[sym]);
  }
  void flush() {
    while (nbits_ != 0) put_bit(1);  // pad with 1s per the standard
  }

 private:
  void put_bit(int b) {
    acc_ = uint8_t((acc_ << 1) | b);
    if (++nbits_ == 8) {
      out_.push_back(acc_);
      if (acc_ == 0xFF) out_.push_back(0x00);  // byte stuffing
      acc_ = 0;
      nbits_ = 0;
    }
  }
  std::vector<uint8_t>& out_;
  uint8_t acc_ = 0;
  int nbits_ = 0;
};

void emit_segment(std::vector<uint8_t>& out, uint8_t marker, const std::vector<uint8_t>& payload) {
  out.push_back(0xFF);
  out.push_back(marker);
  uint16_t len = uint16_t(payload.size() + 2);
  out.push_back(uint8_t(len >> 8));
  out.push_back(uint8_t(len));
  out.insert(out.end(), payload.begin(), payload.end());
}

// Symbols each table slot must cover for this image.
struct NeededSymbols {
  std::array<std::vector<uint8_t>, 4> dc, ac;
};

NeededSymbols collect_needed(const CoeffImage& img) {
  NeededSymbols n;
  for (int c = 0; c < 3; ++c) {
    const Component& comp = img.comps[c];
    auto& dcv = n.dc[comp.dc_tbl];
    auto& acv = n.ac[comp.ac_tbl];
    for (const Block& b : comp.blocks) {
      dcv.push_back(b.dc.group);
      for (const RvPair& p : b.pairs) {
        uint8_t sym = p.is_zrl() ? 0xF0 : uint8_t((p.run << 4) | vli_group(p.value));
        acv.push_back(sym);
      }
      if (b.eob_present) acv.push_back(0x00);
    }
  }
  for (auto* v : {&n.dc, &n.ac})
    for (auto& s : *v) {
      std::sort(s.begin(), s.end());
      s.erase(std::unique(s.begin(), s.end()), s.end());
    }
  return n;
}

}  // namespace

const HuffTable& annex_k_dc(int chroma) {
  static const HuffTable luma = [] {
    HuffTable t;
    t.defined = true;
    t.counts = {0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
    t.symbols = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    return t;
  }();
  static const HuffTable chromat = [] {
    HuffTable t;
    t.defined = true;
    t.counts = {0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    t.symbols = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    return t;
  }();
  return chroma ? chromat : luma;
}

const HuffTable& annex_k_ac(int chroma) {
  static const HuffTable luma = [] {
    HuffTable t;
    t.defined = true;
    t.counts = {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D};
    t.symbols = {
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51,
        0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1,
        0x15, 0x52, 0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18,
        0x19, 0x1A, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39,
        0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57,
        0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75,
        0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92,
        0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
        0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
        0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8,
        0xD9, 0xDA, 0xE1, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2,
        0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA};
    return t;
  }();
  static const HuffTable chromat = [] {
    HuffTable t;
    t.defined = true;
    t.counts = {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77};
    t.symbols = {
        0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07,
        0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09,
        0x23, 0x33, 0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25,
        0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38,
        0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56,
        0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74,
        0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
        0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
        0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA,
        0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6,
        0xD7, 0xD8, 0xD9, 0xDA, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2,
        0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA};
    return t;
  }();
  return chroma ? chromat : luma;
}

CoeffImage decode_jpeg(std::span<const uint8_t> bytes) {
  Parser p(bytes);
  CoeffImage img = p.run();
  for (const auto& comp : img.comps)
    for (const auto& b : comp.blocks) validate_block(b);
  return img;
}

std::vector<uint8_t> encode_jpeg(const CoeffImage& img) {
  for (int c = 0; c < 3; ++c) {
    require(img.comps[c].block_count() == int(img.comps[c].blocks.size()), ErrorKind::format,
            "block count does not match grid");
    for (const Block& b : img.comps[c].blocks) validate_block(b);
  }

  // Resolve table slots, swapping in Annex-K tables where codes are missing.
  NeededSymbols needed = collect_needed(img);
  std::array<HuffTable, 4> dc_tbl = img.huff_dc;
  std::array<HuffTable, 4> ac_tbl = img.huff_ac;
  auto chroma_slot = [&img](int slot, bool ac) {
    // A slot is "chroma" when it serves a chroma component and not Y.
    bool luma = false, chroma = false;
    for (int c = 0; c < 3; ++c) {
      int s = ac ? img.comps[c].ac_tbl : img.comps[c].dc_tbl;
      if (s == slot) (c == 0 ? luma : chroma) = true;
    }
    return chroma && !luma;
  };
  for (int s = 0; s < 4; ++s) {
    if (!needed.dc[s].empty() && (!dc_tbl[s].defined || !covers(dc_tbl[s], needed.dc[s])))
      dc_tbl[s] = annex_k_dc(chroma_slot(s, false));
    if (!needed.ac[s].empty() && (!ac_tbl[s].defined || !covers(ac_tbl[s], needed.ac[s])))
      ac_tbl[s] = annex_k_ac(chroma_slot(s, true));
    if (!needed.dc[s].empty() && !covers(dc_tbl[s], needed.dc[s]))
      fail(ErrorKind::format, "DC category not representable");
  }

  std::vector<uint8_t> out;
  out.push_back(0xFF);
  out.push_back(kSOI);
  for (const auto& [marker, payload] : img.app_segments) emit_segment(out, marker, payload);

  for (int q = 0; q < 4; ++q) {
    const QuantTable& t = img.quant[q];
    if (!t.defined) continue;
    std::vector<uint8_t> p;
    p.push_back(uint8_t((t.precision << 4) | q));
    for (int k = 0; k < 64; ++k) {
      if (t.precision) p.push_back(uint8_t(t.q[k] >> 8));
      p.push_back(uint8_t(t.q[k]));
    }
    emit_segment(out, kDQT, p);
  }

  {
    std::vector<uint8_t> p;
    p.push_back(8);
    p.push_back(uint8_t(img.height >> 8));
    p.push_back(uint8_t(img.height));
    p.push_back(uint8_t(img.width >> 8));
    p.push_back(uint8_t(img.width));
    p.push_back(3);
    for (const auto& c : img.comps) {
      p.push_back(c.id);
      p.push_back(uint8_t((c.h_samp << 4) | c.v_samp));
      p.push_back(uint8_t(c.quant_idx));
    }
    emit_segment(out, kSOF0, p);
  }

  auto emit_dht = [&out](const HuffTable& t, int tc, int th) {
    if (!t.defined) return;
    std::vector<uint8_t> p;
    p.push_back(uint8_t((tc << 4) | th));
    p.insert(p.end(), t.counts.begin(), t.counts.end());
    p.insert(p.end(), t.symbols.begin(), t.symbols.end());
    emit_segment(out, kDHT, p);
  };
  for (int s = 0; s < 4; ++s) {
    emit_dht(dc_tbl[s], 0, s);
    emit_dht(ac_tbl[s], 1, s);
  }

  {
    std::vector<uint8_t> p;
    p.push_back(3);
    for (const auto& c : img.comps) {
      p.push_back(c.id);
      p.push_back(uint8_t((c.dc_tbl << 4) | c.ac_tbl));
    }
    p.push_back(0);
    p.push_back(63);
    p.push_back(0);
    emit_segment(out, kSOS, p);
  }

  std::array<HuffEncoder, 3> dc{HuffEncoder(dc_tbl[img.comps[0].dc_tbl]),
                                HuffEncoder(dc_tbl[img.comps[1].dc_tbl]),
                                HuffEncoder(dc_tbl[img.comps[2].dc_tbl])};
  std::array<HuffEncoder, 3> ac{HuffEncoder(ac_tbl[img.comps[0].ac_tbl]),
                                HuffEncoder(ac_tbl[img.comps[1].ac_tbl]),
                                HuffEncoder(ac_tbl[img.comps[2].ac_tbl])};
  EntropyWriter w(out);
  for (int my = 0; my < img.mcus_y(); ++my) {
    for (int mx = 0; mx < img.mcus_x(); ++mx) {
      for (int c = 0; c < 3; ++c) {
        const Component& comp = img.comps[c];
        for (int by = 0; by < comp.v_samp; ++by) {
          for (int bx = 0; bx < comp.h_samp; ++bx) {
            int row = my * comp.v_samp + by;
            int col = mx * comp.h_samp + bx;
            const Block& blk = comp.blocks[size_t(row) * comp.width_blocks + col];
            w.put_code(dc[c], blk.dc.group);
            w.put_bitstring(blk.dc.bits);
            for (const RvPair& p : blk.pairs) {
              if (p.is_zrl()) {
                w.put_code(ac[c], 0xF0);
              } else {
                VliCode v = vli_encode(p.value);
                w.put_code(ac[c], uint8_t((p.run << 4) | v.group));
                w.put_bitstring(v.bits);
              }
            }
            if (blk.eob_present) w.put_code(ac[c], 0x00);
          }
        }
      }
    }
  }
  w.flush();

  out.push_back(0xFF);
  out.push_back(kEOI);
  return out;
}

}  // namespace jes
