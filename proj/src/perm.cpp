#include "jes/perm.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <numeric>

namespace jes {

std::vector<uint8_t> DomainTag::serialize() const {
  std::vector<uint8_t> out;
  auto put_u32 = [&out](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
  };
  put_u32(uint32_t(tokens_.size()));
  for (const auto& t : tokens_) {
    put_u32(uint32_t(t.size()));
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

namespace {

void shake256(const uint8_t* in, size_t in_len, uint8_t* out, size_t out_len) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, ErrorKind::io, "EVP_MD_CTX_new");
  bool ok = EVP_DigestInit_ex(ctx, EVP_shake256(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, in, in_len) == 1 &&
            EVP_DigestFinalXOF(ctx, out, out_len) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, ErrorKind::io, "SHAKE256 failed");
}

}  // namespace

XofStream::XofStream(const SeedKey& key, const DomainTag& tag, std::string_view usage) {
  seed_.assign(key.secret.begin(), key.secret.end());
  auto put_str = [this](std::string_view s) {
    uint32_t n = uint32_t(s.size());
    for (int i = 0; i < 4; ++i) seed_.push_back(uint8_t(n >> (8 * i)));
    seed_.insert(seed_.end(), s.begin(), s.end());
  };
  put_str(key.role);
  auto t = tag.serialize();
  seed_.insert(seed_.end(), t.begin(), t.end());
  put_str(usage);
  seed_.resize(seed_.size() + 8);  // room for the block counter
}

void XofStream::refill() {
  for (int i = 0; i < 8; ++i) seed_[seed_.size() - 8 + i] = uint8_t(counter_ >> (8 * i));
  ++counter_;
  shake256(seed_.data(), seed_.size(), block_.data(), block_.size());
  byte_pos_ = 0;
  bit_pos_ = 0;
  primed_ = true;
}

uint8_t XofStream::next_byte() {
  if (!primed_ || byte_pos_ >= block_.size()) refill();
  bit_pos_ = 0;
  return block_[byte_pos_++];
}

void XofStream::fill(uint8_t* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = next_byte();
}

uint64_t XofStream::next_bits(unsigned k) {
  require(k <= 64, ErrorKind::range, "next_bits k");
  uint64_t v = 0;
  unsigned got = 0;
  while (got < k) {
    if (!primed_ || byte_pos_ >= block_.size()) refill();
    unsigned avail = 8 - bit_pos_;
    unsigned take = std::min(avail, k - got);
    uint8_t b = block_[byte_pos_];
    uint8_t chunk = uint8_t(b >> (avail - take)) & uint8_t((1u << take) - 1);
    v = (v << take) | chunk;
    got += take;
    bit_pos_ += take;
    if (bit_pos_ == 8) {
      bit_pos_ = 0;
      ++byte_pos_;
    }
  }
  return v;
}

uint64_t XofStream::uniform(uint64_t n) {
  require(n >= 1, ErrorKind::range, "uniform over empty range");
  if (n == 1) return 0;
  unsigned k = unsigned(std::bit_width(n - 1));
  for (;;) {
    uint64_t v = next_bits(k);
    if (v < n) return v;
  }
}

Permutation::Permutation(std::vector<uint32_t> mapping) : map_(std::move(mapping)) {
  std::vector<bool> seen(map_.size(), false);
  for (uint32_t k : map_) {
    require(k >= 1 && k <= map_.size() && !seen[k - 1], ErrorKind::format,
            "mapping is not a permutation");
    seen[k - 1] = true;
  }
}

Permutation Permutation::identity(size_t n) {
  std::vector<uint32_t> m(n);
  std::iota(m.begin(), m.end(), 1u);
  return unchecked(std::move(m));
}

Permutation Permutation::unchecked(std::vector<uint32_t> mapping) {
  Permutation p;
  p.map_ = std::move(mapping);
  return p;
}

bool Permutation::is_identity() const {
  for (size_t i = 0; i < map_.size(); ++i)
    if (map_[i] != i + 1) return false;
  return true;
}

Permutation Permutation::inverse() const {
  std::vector<uint32_t> inv(map_.size());
  for (size_t i = 0; i < map_.size(); ++i) inv[map_[i] - 1] = uint32_t(i + 1);
  return unchecked(std::move(inv));
}

Permutation enc_perm(const Permutation& data, const Permutation& key) {
  return Permutation(enc_perm(data.mapping(), key));
}

Permutation dec_perm(const Permutation& data, const Permutation& key) {
  return Permutation(dec_perm(data.mapping(), key));
}

Permutation rand_perm(const SeedKey& key, size_t n, const DomainTag& tag) {
  require(n >= 1, ErrorKind::range, "rand_perm of empty domain");
  XofStream xs(key, tag, "rand_perm");
  std::vector<uint32_t> m(n);
  std::iota(m.begin(), m.end(), 1u);
  for (size_t i = n - 1; i > 0; --i) {
    uint64_t j = xs.uniform(i + 1);
    std::swap(m[i], m[j]);
  }
  return Permutation::unchecked(std::move(m));
}

BitString stm_ciph(const SeedKey& key, size_t len_bits, const DomainTag& tag) {
  require(len_bits >= 1, ErrorKind::range, "stm_ciph of zero length");
  XofStream xs(key, tag, "stm_ciph");
  std::vector<bool> bits(len_bits);
  for (size_t i = 0; i < len_bits; ++i) bits[i] = xs.next_bits(1) != 0;
  return BitString(std::move(bits));
}

Rng::Rng(const SeedKey& master, const DomainTag& stream) : xs_(master, stream, "rng") {}

SeedKey Rng::fresh_seed_key(std::string role) {
  SeedKey k;
  xs_.fill(k.secret.data(), k.secret.size());
  k.role = std::move(role);
  return k;
}

std::array<uint8_t, 32> Rng::bytes32() {
  std::array<uint8_t, 32> b;
  xs_.fill(b.data(), b.size());
  return b;
}

std::array<uint8_t, 12> Rng::bytes12() {
  std::array<uint8_t, 12> b;
  xs_.fill(b.data(), b.size());
  return b;
}

uint64_t Rng::uniform(uint64_t n) { return xs_.uniform(n); }

}  // namespace jes
