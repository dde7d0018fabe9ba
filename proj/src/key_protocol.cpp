#include "jes/key_protocol.hpp"

#include <algorithm>

#include "jes/crypto_backend.hpp"
#include "jes/error.hpp"
#include "jes/jpeg_codec.hpp"
#include "jes/serial.hpp"

namespace jes {

UserKeySeeds UserKeySeeds::fresh(Rng& rng) {
  UserKeySeeds s;
  for (int c = 0; c < 3; ++c) {
    s.key_ublo[c] = rng.fresh_seed_key(std::string("key_Ublo_") + component_name(c));
    s.key_uinblo[c] = rng.fresh_seed_key(std::string("key_Uinblo_") + component_name(c));
    s.key_udc[c] = rng.fresh_seed_key(std::string("key_Udc_") + component_name(c));
  }
  return s;
}

UserKey gen_user_key(const UserKeySeeds& seeds) {
  UserKey u;
  u.seeds = seeds;
  for (int c = 0; c < 3; ++c) {
    u.upmtp[c].reserve(kMaxPairs);
    for (int s = 1; s <= kMaxPairs; ++s)
      u.upmtp[c].push_back(
          rand_perm(seeds.key_uinblo[c], size_t(s), tag("upmtp", component_name(c), uint64_t(s))));
    u.ubitkey[c].reserve(kMaxMaskBits);
    for (int l = 1; l <= kMaxMaskBits; ++l)
      u.ubitkey[c].push_back(
          stm_ciph(seeds.key_udc[c], size_t(l), tag("ubitkey", component_name(c), uint64_t(l))));
  }
  return u;
}

const Permutation& UserKey::upmtb_for(int comp, uint32_t n) {
  auto it = upmtb[comp].find(n);
  if (it != upmtb[comp].end()) return it->second;
  require(seeds.has_value(), ErrorKind::contract,
          "user key lacks a permutation of length " + std::to_string(n));
  auto [ins, _] = upmtb[comp].emplace(
      n, rand_perm(seeds->key_ublo[comp], n, tag("upmtb", component_name(comp), uint64_t(n))));
  return ins->second;
}

bool UserKey::has_upmtb(int comp, uint32_t n) const {
  return seeds.has_value() || upmtb[comp].count(n) != 0;
}

uint8_t UserKey::dc_len_mask(int comp, size_t block_index) const {
  const BitString& base = ubitkey[comp][kMaxMaskBits - 1];
  BitString rot = base.rotl(block_index % kMaxMaskBits);
  uint8_t m = 0;
  for (int i = 0; i < 8; ++i) m = uint8_t((m << 1) | (rot[size_t(i)] ? 1 : 0));
  return m;
}

std::array<uint8_t, 32> pos_key_mac_key(const ValKey& scope_val_key, const std::string& iid) {
  std::vector<uint8_t> buf;
  const char* label = "jes-posmac";
  buf.insert(buf.end(), label, label + 10);
  auto vk = serialize_val_key(scope_val_key);
  buf.insert(buf.end(), vk.begin(), vk.end());
  buf.insert(buf.end(), iid.begin(), iid.end());
  return sha256(buf);
}

std::array<uint8_t, 32> pos_key_mac(const PosKey& pk, const std::array<uint8_t, 32>& mac_key) {
  return hmac_sha256(mac_key, serialize_pos_key(pk));
}

namespace {

// Shared mechanics of Algorithm 7 and the KMC transform: only the permutation
// flavor differs.
enum class Flavor { enc, dec };

Permutation apply(Flavor f, const Permutation& data, const Permutation& key) {
  return f == Flavor::enc ? enc_perm(data, key) : dec_perm(data, key);
}

template <typename SrcComp, typename DstComp>
void transform_comp(Flavor f, const SrcComp& src, DstComp& dst, UserKey& ukey, int c) {
  uint32_t n = uint32_t(src.pmtb.size());
  dst.pmtb = apply(f, src.pmtb, ukey.upmtb_for(c, n));
  dst.pmtp.reserve(src.pmtp.size());
  for (const Permutation& p : src.pmtp) {
    if (p.empty()) {
      dst.pmtp.emplace_back();
      continue;
    }
    require(p.size() <= kMaxPairs, ErrorKind::contract, "pair count beyond key family");
    dst.pmtp.push_back(apply(f, p, ukey.upmtp[c][p.size() - 1]));
  }
  dst.bitkey.reserve(src.bitkey.size());
  for (const BitString& b : src.bitkey) {
    if (b.empty()) {
      dst.bitkey.emplace_back();
      continue;
    }
    require(b.size() <= kMaxMaskBits, ErrorKind::contract, "mask length beyond key family");
    dst.bitkey.push_back(b ^ ukey.ubitkey[c][b.size() - 1]);
  }
}

}  // namespace

EncPosKey img_key_enc(const PosKey& pk, UserKey& ukey, const std::array<uint8_t, 32>& mac_key) {
  EncPosKey e;
  e.iid = pk.iid;
  for (int c = 0; c < 3; ++c) {
    transform_comp(Flavor::dec, pk.comps[c], e.comps[c], ukey, c);
    e.comps[c].masked_dc_len.reserve(pk.comps[c].plain_dc_len.size());
    for (size_t j = 0; j < pk.comps[c].plain_dc_len.size(); ++j)
      e.comps[c].masked_dc_len.push_back(pk.comps[c].plain_dc_len[j] ^ ukey.dc_len_mask(c, j));
  }
  e.mac = pos_key_mac(pk, mac_key);
  return e;
}

EncPosKey kmc_transform(const EncPosKey& enc, UserKey& link) {
  EncPosKey e;
  e.iid = enc.iid;
  for (int c = 0; c < 3; ++c) {
    transform_comp(Flavor::enc, enc.comps[c], e.comps[c], link, c);
    e.comps[c].masked_dc_len.reserve(enc.comps[c].masked_dc_len.size());
    for (size_t j = 0; j < enc.comps[c].masked_dc_len.size(); ++j)
      e.comps[c].masked_dc_len.push_back(enc.comps[c].masked_dc_len[j] ^ link.dc_len_mask(c, j));
  }
  e.mac = enc.mac;
  return e;
}

PosKey user_recover_pos_key(const EncPosKey& enc2, UserKey& ukey_uid,
                            const std::array<uint8_t, 32>& mac_key) {
  PosKey pk;
  pk.iid = enc2.iid;
  for (int c = 0; c < 3; ++c) {
    transform_comp(Flavor::dec, enc2.comps[c], pk.comps[c], ukey_uid, c);
    pk.comps[c].plain_dc_len.reserve(enc2.comps[c].masked_dc_len.size());
    for (size_t j = 0; j < enc2.comps[c].masked_dc_len.size(); ++j)
      pk.comps[c].plain_dc_len.push_back(enc2.comps[c].masked_dc_len[j] ^
                                         ukey_uid.dc_len_mask(c, j));
  }
  require(pos_key_mac(pk, mac_key) == enc2.mac, ErrorKind::tamper,
          "recovered position key fails authentication");
  return pk;
}

namespace {

UserKey combine_user_keys(Flavor f, const UserKey& a, UserKey& b) {
  UserKey r;
  for (int c = 0; c < 3; ++c) {
    for (const auto& [n, p] : a.upmtb[c]) {
      require(b.has_upmtb(c, n), ErrorKind::contract,
              "key domains differ at length " + std::to_string(n));
      r.upmtb[c].emplace(n, apply(f, p, b.upmtb_for(c, n)));
    }
    require(a.upmtp[c].size() == size_t(kMaxPairs) && b.upmtp[c].size() == size_t(kMaxPairs),
            ErrorKind::contract, "upmtp family incomplete");
    r.upmtp[c].reserve(kMaxPairs);
    for (int s = 0; s < kMaxPairs; ++s)
      r.upmtp[c].push_back(apply(f, a.upmtp[c][size_t(s)], b.upmtp[c][size_t(s)]));
    require(a.ubitkey[c].size() == size_t(kMaxMaskBits) &&
                b.ubitkey[c].size() == size_t(kMaxMaskBits),
            ErrorKind::contract, "ubitkey family incomplete");
    r.ubitkey[c].reserve(kMaxMaskBits);
    for (int l = 0; l < kMaxMaskBits; ++l)
      r.ubitkey[c].push_back(a.ubitkey[c][size_t(l)] ^ b.ubitkey[c][size_t(l)]);
  }
  return r;
}

}  // namespace

UserKey user_key_enc(const UserKey& a, UserKey& b) { return combine_user_keys(Flavor::enc, a, b); }
UserKey user_key_dec(const UserKey& a, UserKey& b) { return combine_user_keys(Flavor::dec, a, b); }

UserKey derive_inc_usr_key(const UserKey& u_oid, UserKey& u_gid) {
  return user_key_dec(u_oid, u_gid);
}

namespace {

// Table -> one-based permutation over symbol indices.
Permutation v_table_perm(const std::array<int8_t, kVAlphabet>& t) {
  std::vector<uint32_t> m(kVAlphabet);
  for (int i = 0; i < kVAlphabet; ++i) m[size_t(i)] = uint32_t(v_index(t[size_t(i)]) + 1);
  return Permutation(std::move(m));
}

Permutation dcl_table_perm(const std::array<uint8_t, 10>& t) {
  std::vector<uint32_t> m(10);
  for (int g = 0; g < 10; ++g) m[size_t(g)] = uint32_t(t[size_t(g)] + 1);
  return Permutation(std::move(m));
}

}  // namespace

IncValKey derive_inc_val_key(const ValKey& v_oid, const ValKey& v_gid) {
  require(v_oid.n_pmt1 == v_gid.n_pmt1 && v_oid.n_pmt2 == v_gid.n_pmt2, ErrorKind::contract,
          "table counts differ");
  IncValKey inc;
  inc.n_pmt1 = v_oid.n_pmt1;
  inc.n_pmt2 = v_oid.n_pmt2;
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < inc.n_pmt1; ++t) {
      Permutation d = dec_perm(v_table_perm(v_oid.pmtv[c][size_t(t)]),
                               v_table_perm(v_gid.pmtv[c][size_t(t)]));
      std::array<int8_t, kVAlphabet> table{};
      for (int i = 0; i < kVAlphabet; ++i)
        table[size_t(i)] = int8_t(v_from_index(int(d.at(size_t(i) + 1)) - 1));
      inc.dv[c].push_back(table);
    }
    for (int t = 0; t < inc.n_pmt2; ++t) {
      Permutation d = dec_perm(dcl_table_perm(v_oid.pmt_dcl[c][size_t(t)]),
                               dcl_table_perm(v_gid.pmt_dcl[c][size_t(t)]));
      std::array<uint8_t, 10> table{};
      for (int g = 0; g < 10; ++g) table[size_t(g)] = uint8_t(d.at(size_t(g) + 1) - 1);
      inc.dl[c].push_back(table);
    }
  }
  return inc;
}

namespace {

// Length adjustment shared by cs_reencrypt and group_bitkeys: suffix when
// shrinking, MSB zero-extension when growing.
BitString adjust_dc_bits(const BitString& bits, int new_len) {
  if (size_t(new_len) <= bits.size()) return bits.low_bits(size_t(new_len));
  return bits.zext(size_t(new_len));
}

}  // namespace

CoeffImage cs_reencrypt_for_group(const CoeffImage& owner_ct, const IncValKey& inc) {
  CoeffImage out = owner_ct;
  for (int c = 0; c < 3; ++c) {
    // Inverted deltas convert owner-encrypted symbols to group-encrypted ones.
    std::vector<std::array<int8_t, kVAlphabet>> inv_v(inc.dv[c].size());
    for (size_t t = 0; t < inc.dv[c].size(); ++t)
      for (int i = 0; i < kVAlphabet; ++i)
        inv_v[t][size_t(v_index(inc.dv[c][t][size_t(i)]))] = int8_t(v_from_index(i));
    std::vector<std::array<uint8_t, 10>> inv_l(inc.dl[c].size());
    for (size_t t = 0; t < inc.dl[c].size(); ++t)
      for (int g = 0; g < 10; ++g) inv_l[t][inc.dl[c][t][size_t(g)]] = uint8_t(g);

    auto& blocks = out.comps[c].blocks;
    for (size_t j = 0; j < blocks.size(); ++j) {
      Block& b = blocks[j];
      int i = int(j) + 1;
      const auto& tv = inv_v[size_t(sqnt(i, inc.n_pmt1) - 1)];
      for (RvPair& p : b.pairs)
        if (v_in_table(p.value)) p.value = tv[size_t(v_index(p.value))];
      int el = b.dc.group;
      if (el <= 9) {
        int el2 = inv_l[size_t(sqnt(i, inc.n_pmt2) - 1)][size_t(el)];
        b.dc = VliCode{uint8_t(el2), adjust_dc_bits(b.dc.bits, el2)};
      }
    }
  }
  return out;
}

EncryptedImage cs_reencrypt_for_group(const EncryptedImage& owner_ct, const IncValKey& inc,
                                      const std::string& gid) {
  CoeffImage ct = decode_jpeg(owner_ct.jpeg);
  EncryptedImage out = owner_ct;
  out.owner_id = gid;
  out.jpeg = encode_jpeg(cs_reencrypt_for_group(ct, inc));
  return out;
}

std::array<std::vector<BitString>, 3> group_bitkeys(const PosKey& pk, const ValKey& v_oid,
                                                    const ValKey& v_gid, const PosSeeds& seeds) {
  require(v_oid.n_pmt2 == v_gid.n_pmt2, ErrorKind::contract, "table counts differ");
  std::array<std::vector<BitString>, 3> out;
  for (int c = 0; c < 3; ++c) {
    const auto& comp = pk.comps[c];
    out[c].reserve(comp.bitkey.size());
    for (size_t j = 0; j < comp.bitkey.size(); ++j) {
      int i = int(j) + 1;
      int g = comp.plain_dc_len[j];
      int t2 = sqnt(i, v_oid.n_pmt2);
      int el_o = g <= 9 ? v_oid.pmt_dcl[c][size_t(t2 - 1)][size_t(g)] : g;
      int el_g = g <= 9 ? v_gid.pmt_dcl[c][size_t(t2 - 1)][size_t(g)] : g;
      BitString stream =
          stm_ciph(seeds.key_dc[c], 16, tag("bitdc", component_name(c), pk.iid, uint64_t(i)));
      BitString enc_o = stream.low_bits(size_t(el_o));
      BitString enc_g = adjust_dc_bits(enc_o, el_g);
      size_t m_o = size_t(std::max(g, el_o));
      require(comp.bitkey[j].size() == m_o, ErrorKind::key_mismatch, "bitkey length mismatch");
      BitString dc_bits = (comp.bitkey[j] ^ enc_o.zext(m_o)).low_bits(size_t(g));
      size_t m_g = size_t(std::max(g, el_g));
      out[c].push_back(enc_g.zext(m_g) ^ dc_bits.zext(m_g));
    }
  }
  return out;
}

std::vector<uint8_t> wrap_for_group(const EncPosKey& enc2, const std::array<uint8_t, 32>& key,
                                    const std::array<uint8_t, 12>& nonce) {
  return aead_seal(key, nonce, serialize_enc_pos_key(enc2));
}

EncPosKey unwrap_for_group(const std::vector<uint8_t>& envelope,
                           const std::array<uint8_t, 32>& key) {
  return deserialize_enc_pos_key(aead_open(key, envelope));
}

// --------------------------------------------------------------------------
// Containers.

namespace {
constexpr char kEncPosMagic[4] = {'J', 'E', 'S', 'E'};
constexpr char kUserMagic[4] = {'J', 'E', 'S', 'U'};
constexpr uint16_t kKeyVersion = 1;

void put_perm(Writer& w, const Permutation& p) {
  w.u32(uint32_t(p.size()));
  for (uint32_t v : p.mapping()) w.u32(v);
}

Permutation get_perm(Reader& r) {
  uint32_t n = r.u32();
  std::vector<uint32_t> m(n);
  for (auto& v : m) v = r.u32();
  return Permutation(std::move(m));
}

void put_seed(Writer& w, const SeedKey& k) {
  w.arr(k.secret);
  w.str(k.role);
}

SeedKey get_seed(Reader& r) {
  SeedKey k;
  k.secret = r.arr<32>();
  k.role = r.str();
  return k;
}

}  // namespace

std::vector<uint8_t> serialize_enc_pos_key(const EncPosKey& e) {
  Writer w;
  put_magic(w, kEncPosMagic, kKeyVersion);
  w.str(e.iid);
  for (int c = 0; c < 3; ++c) {
    const auto& comp = e.comps[c];
    put_perm(w, comp.pmtb);
    w.u32(uint32_t(comp.pmtp.size()));
    for (const auto& p : comp.pmtp) put_perm(w, p);
    w.u32(uint32_t(comp.bitkey.size()));
    for (const auto& b : comp.bitkey) w.bits(b);
    w.u32(uint32_t(comp.masked_dc_len.size()));
    for (uint8_t g : comp.masked_dc_len) w.u8(g);
  }
  w.arr(e.mac);
  return w.take();
}

EncPosKey deserialize_enc_pos_key(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kEncPosMagic, kKeyVersion);
  EncPosKey e;
  e.iid = r.str();
  for (int c = 0; c < 3; ++c) {
    auto& comp = e.comps[c];
    comp.pmtb = get_perm(r);
    comp.pmtp.resize(r.u32());
    for (auto& p : comp.pmtp) p = get_perm(r);
    comp.bitkey.resize(r.u32());
    for (auto& b : comp.bitkey) b = r.bits();
    comp.masked_dc_len.resize(r.u32());
    for (auto& g : comp.masked_dc_len) g = r.u8();
  }
  e.mac = r.arr<32>();
  return e;
}

std::vector<uint8_t> serialize_user_key(const UserKey& u) {
  Writer w;
  put_magic(w, kUserMagic, kKeyVersion);
  w.u8(u.seeds.has_value() ? 1 : 0);
  if (u.seeds) {
    for (int c = 0; c < 3; ++c) {
      put_seed(w, u.seeds->key_ublo[c]);
      put_seed(w, u.seeds->key_uinblo[c]);
      put_seed(w, u.seeds->key_udc[c]);
    }
  }
  for (int c = 0; c < 3; ++c) {
    w.u32(uint32_t(u.upmtb[c].size()));
    for (const auto& [n, p] : u.upmtb[c]) {
      w.u32(n);
      put_perm(w, p);
    }
    w.u32(uint32_t(u.upmtp[c].size()));
    for (const auto& p : u.upmtp[c]) put_perm(w, p);
    w.u32(uint32_t(u.ubitkey[c].size()));
    for (const auto& b : u.ubitkey[c]) w.bits(b);
  }
  return w.take();
}

UserKey deserialize_user_key(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kUserMagic, kKeyVersion);
  UserKey u;
  if (r.u8()) {
    UserKeySeeds s;
    for (int c = 0; c < 3; ++c) {
      s.key_ublo[c] = get_seed(r);
      s.key_uinblo[c] = get_seed(r);
      s.key_udc[c] = get_seed(r);
    }
    u.seeds = s;
  }
  for (int c = 0; c < 3; ++c) {
    uint32_t nb = r.u32();
    for (uint32_t i = 0; i < nb; ++i) {
      uint32_t n = r.u32();
      u.upmtb[c].emplace(n, get_perm(r));
    }
    u.upmtp[c].resize(r.u32());
    for (auto& p : u.upmtp[c]) p = get_perm(r);
    u.ubitkey[c].resize(r.u32());
    for (auto& b : u.ubitkey[c]) b = r.bits();
  }
  return u;
}

}  // namespace jes
