#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "jes/bits.hpp"
#include "jes/error.hpp"

namespace jes {

// 32-byte secret plus the role it was derived for; the role participates in
// keystream derivation so distinct roles never share streams.
struct SeedKey {
  std::array<uint8_t, 32> secret{};
  std::string role;

  bool operator==(const SeedKey&) const = default;
};

// Ordered token list identifying one derivation context (image id, component,
// block index, ...). Serialization is length-prefixed, hence injective.
class DomainTag {
 public:
  DomainTag() = default;

  DomainTag& add(std::string_view t) {
    tokens_.emplace_back(t);
    return *this;
  }
  DomainTag& add(uint64_t v) { return add(std::to_string(v)); }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<uint8_t> serialize() const;

 private:
  std::vector<std::string> tokens_;
};

template <typename... Ts>
DomainTag tag(Ts&&... parts) {
  DomainTag t;
  (t.add(parts), ...);
  return t;
}

// Deterministic keystream: SHAKE256 over secret‖role‖tag‖usage in counter
// blocks. Referentially transparent; every consumer gets an independent
// stream through its (key, tag, usage) triple.
class XofStream {
 public:
  XofStream(const SeedKey& key, const DomainTag& tag, std::string_view usage);

  uint8_t next_byte();
  void fill(uint8_t* out, size_t n);
  // Next k bits (MSB-first across the byte stream), k <= 64.
  uint64_t next_bits(unsigned k);
  // Unbiased draw from [0, n) by rejection sampling.
  uint64_t uniform(uint64_t n);

 private:
  void refill();
  std::vector<uint8_t> seed_;
  uint64_t counter_ = 0;
  std::array<uint8_t, 136> block_{};
  size_t byte_pos_ = 0;
  unsigned bit_pos_ = 0;  // bits already consumed of block_[byte_pos_]
  bool primed_ = false;
};

// One-based permutation of {1..n}: mapping()[i] is k_{i+1}.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<uint32_t> mapping);

  static Permutation identity(size_t n);

  size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }
  // k_i for one-based position i.
  uint32_t at(size_t i) const { return map_[i - 1]; }
  const std::vector<uint32_t>& mapping() const { return map_; }

  bool is_identity() const;
  Permutation inverse() const;

  // For values already known to be bijective (generator output, containers).
  static Permutation unchecked(std::vector<uint32_t> mapping);

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<uint32_t> map_;
};

// Algorithm "EncPerm": c_i = d_{k_i}.
template <typename Seq>
Seq enc_perm(const Seq& data, const Permutation& key) {
  require(data.size() == key.size(), ErrorKind::contract, "enc_perm length mismatch");
  Seq out(data.size(), typename Seq::value_type{});
  for (size_t i = 1; i <= key.size(); ++i) out[i - 1] = data[key.at(i) - 1];
  return out;
}

// Algorithm "DecPerm": d_{k_i} = c_i.
template <typename Seq>
Seq dec_perm(const Seq& data, const Permutation& key) {
  require(data.size() == key.size(), ErrorKind::contract, "dec_perm length mismatch");
  Seq out(data.size(), typename Seq::value_type{});
  for (size_t i = 1; i <= key.size(); ++i) out[key.at(i) - 1] = data[i - 1];
  return out;
}

Permutation enc_perm(const Permutation& data, const Permutation& key);
Permutation dec_perm(const Permutation& data, const Permutation& key);

// Keyed uniform permutation of {1..n}: Fisher–Yates driven by the keystream,
// index draws by rejection sampling.
Permutation rand_perm(const SeedKey& key, size_t n, const DomainTag& tag);

// Keyed bitstream of exactly len_bits bits.
BitString stm_ciph(const SeedKey& key, size_t len_bits, const DomainTag& tag);

// Deterministic source of fresh key material for protocol flows. Seeded once;
// every draw advances the stream, so replaying a flow sequence replays the
// keys.
class Rng {
 public:
  Rng(const SeedKey& master, const DomainTag& stream);

  SeedKey fresh_seed_key(std::string role);
  std::array<uint8_t, 32> bytes32();
  std::array<uint8_t, 12> bytes12();
  uint64_t uniform(uint64_t n);

 private:
  XofStream xs_;
};

}  // namespace jes
