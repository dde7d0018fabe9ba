#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "jes/bits.hpp"
#include "jes/error.hpp"

namespace jes {

// Little-endian binary writer for the key/index containers. Canonical: the
// same object always serializes to the same bytes (MAC inputs rely on this).
class Writer {
 public:
  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u32(uint32_t v) { le(v, 4); }
  void u64(uint64_t v) { le(v, 8); }
  void f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void raw(const uint8_t* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void blob(const std::vector<uint8_t>& b) {
    u32(uint32_t(b.size()));
    raw(b.data(), b.size());
  }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    raw(reinterpret_cast<const uint8_t*>(s.data()), s.size());
  }
  void bits(const BitString& b) {
    u32(uint32_t(b.size()));
    auto p = b.packed();
    raw(p.data(), p.size());
  }
  template <size_t N>
  void arr(const std::array<uint8_t, N>& a) {
    raw(a.data(), N);
  }

 private:
  void le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& b) : p_(b.data()), n_(b.size()) {}
  Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}

  size_t remaining() const { return n_ - pos_; }
  bool done() const { return pos_ == n_; }

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() { return uint16_t(le(2)); }
  uint32_t u32() { return uint32_t(le(4)); }
  uint64_t u64() { return le(8); }
  double f64() {
    uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::vector<uint8_t> blob() {
    uint32_t n = u32();
    const uint8_t* p = take(n);
    return {p, p + n};
  }
  std::string str() {
    uint32_t n = u32();
    const uint8_t* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  BitString bits() {
    uint32_t nbits = u32();
    size_t nbytes = (nbits + 7) / 8;
    const uint8_t* p = take(nbytes);
    return BitString::unpack({p, p + nbytes}, nbits);
  }
  template <size_t N>
  std::array<uint8_t, N> arr() {
    const uint8_t* p = take(N);
    std::array<uint8_t, N> a;
    std::copy(p, p + N, a.begin());
    return a;
  }

 private:
  const uint8_t* take(size_t n) {
    require(pos_ + n <= n_, ErrorKind::format, "container truncated");
    const uint8_t* p = p_ + pos_;
    pos_ += n;
    return p;
  }
  uint64_t le(int n) {
    const uint8_t* p = take(n);
    uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

inline void expect_magic(Reader& r, const char magic[4], uint16_t version) {
  auto m = r.arr<4>();
  require(std::memcmp(m.data(), magic, 4) == 0, ErrorKind::format, "bad container magic");
  uint16_t v = r.u16();
  require(v == version, ErrorKind::format, "unsupported container version");
}

inline void put_magic(Writer& w, const char magic[4], uint16_t version) {
  w.raw(reinterpret_cast<const uint8_t*>(magic), 4);
  w.u16(version);
}

}  // namespace jes
