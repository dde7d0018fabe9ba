#include "jes/image_cipher.hpp"

#include <algorithm>
#include <cmath>

#include "jes/error.hpp"
#include "jes/jpeg_codec.hpp"
#include "jes/serial.hpp"

namespace jes {

ValSeeds ValSeeds::fresh(Rng& rng) {
  ValSeeds s;
  for (int c = 0; c < 3; ++c) {
    s.key_v[c] = rng.fresh_seed_key(std::string("key_v_") + component_name(c));
    s.key_l[c] = rng.fresh_seed_key(std::string("key_l_") + component_name(c));
  }
  return s;
}

PosSeeds PosSeeds::fresh(Rng& rng) {
  PosSeeds s;
  for (int c = 0; c < 3; ++c) {
    s.key_blo[c] = rng.fresh_seed_key(std::string("key_blo_") + component_name(c));
    s.key_inblo[c] = rng.fresh_seed_key(std::string("key_inblo_") + component_name(c));
    s.key_dc[c] = rng.fresh_seed_key(std::string("key_dc_") + component_name(c));
  }
  return s;
}

ValKey gen_val_key(const ValSeeds& seeds, int n_pmt1, int n_pmt2) {
  require(n_pmt1 >= 1 && n_pmt2 >= 1, ErrorKind::range, "table counts must be >= 1");
  ValKey vk;
  vk.n_pmt1 = n_pmt1;
  vk.n_pmt2 = n_pmt2;
  for (int c = 0; c < 3; ++c) {
    for (int t = 1; t <= n_pmt1; ++t) {
      Permutation p = rand_perm(seeds.key_v[c], kVAlphabet, tag("pmtv", component_name(c), uint64_t(t)));
      std::array<int8_t, kVAlphabet> table{};
      for (int i = 0; i < kVAlphabet; ++i) table[i] = int8_t(v_from_index(int(p.at(i + 1)) - 1));
      vk.pmtv[c].push_back(table);
    }
    for (int t = 1; t <= n_pmt2; ++t) {
      Permutation p = rand_perm(seeds.key_l[c], 10, tag("pmtdcl", component_name(c), uint64_t(t)));
      std::array<uint8_t, 10> table{};
      for (int g = 0; g < 10; ++g) table[g] = uint8_t(p.at(g + 1) - 1);
      vk.pmt_dcl[c].push_back(table);
    }
  }
  return vk;
}

std::array<Permutation, 3> gen_block_perms(const CoeffImage& img, const PosSeeds& seeds,
                                           const std::string& iid) {
  std::array<Permutation, 3> pmtb;
  for (int c = 0; c < 3; ++c)
    pmtb[c] = rand_perm(seeds.key_blo[c], img.comps[c].blocks.size(),
                        tag("pmtb", component_name(c), iid));
  return pmtb;
}

CoeffImage block_permute(const CoeffImage& img, const std::array<Permutation, 3>& pmtb) {
  CoeffImage out = img;
  for (int c = 0; c < 3; ++c) {
    require(pmtb[c].size() == img.comps[c].blocks.size(), ErrorKind::contract,
            "pmtb length != blknum");
    out.comps[c].blocks = enc_perm(img.comps[c].blocks, pmtb[c]);
  }
  return out;
}

CoeffImage block_unpermute(const CoeffImage& img, const std::array<Permutation, 3>& pmtb) {
  CoeffImage out = img;
  for (int c = 0; c < 3; ++c) {
    require(pmtb[c].size() == img.comps[c].blocks.size(), ErrorKind::key_mismatch,
            "pmtb length != blknum");
    out.comps[c].blocks = dec_perm(img.comps[c].blocks, pmtb[c]);
  }
  return out;
}

std::array<std::vector<Permutation>, 3> gen_intra_perms(const CoeffImage& img,
                                                        const PosSeeds& seeds,
                                                        const std::string& iid) {
  std::array<std::vector<Permutation>, 3> pmtp;
  for (int c = 0; c < 3; ++c) {
    pmtp[c].reserve(img.comps[c].blocks.size());
    for (size_t j = 0; j < img.comps[c].blocks.size(); ++j) {
      size_t s = img.comps[c].blocks[j].pairs.size();
      if (s == 0) {
        pmtp[c].emplace_back();
      } else {
        pmtp[c].push_back(rand_perm(seeds.key_inblo[c], s,
                                    tag("pmtp", component_name(c), iid, uint64_t(j + 1))));
      }
    }
  }
  return pmtp;
}

CoeffImage intra_block_permute(const CoeffImage& img,
                               const std::array<std::vector<Permutation>, 3>& pmtp) {
  CoeffImage out = img;
  for (int c = 0; c < 3; ++c) {
    require(pmtp[c].size() == img.comps[c].blocks.size(), ErrorKind::contract,
            "pmtp count != blknum");
    for (size_t j = 0; j < out.comps[c].blocks.size(); ++j) {
      Block& b = out.comps[c].blocks[j];
      require(pmtp[c][j].size() == b.pairs.size(), ErrorKind::contract,
              "pmtp length != blksize");
      if (b.pairs.size() > 1) b.pairs = enc_perm(b.pairs, pmtp[c][j]);
    }
  }
  return out;
}

CoeffImage intra_block_unpermute(const CoeffImage& img,
                                 const std::array<std::vector<Permutation>, 3>& pmtp) {
  CoeffImage out = img;
  for (int c = 0; c < 3; ++c) {
    require(pmtp[c].size() == img.comps[c].blocks.size(), ErrorKind::key_mismatch,
            "pmtp count != blknum");
    for (size_t j = 0; j < out.comps[c].blocks.size(); ++j) {
      Block& b = out.comps[c].blocks[j];
      require(pmtp[c][j].size() == b.pairs.size(), ErrorKind::key_mismatch,
              "pmtp length != blksize");
      if (b.pairs.size() > 1) b.pairs = dec_perm(b.pairs, pmtp[c][j]);
    }
  }
  return out;
}

namespace {

// Encrypted DC length: substituted for g <= 9, pass-through above the table
// domain (still XOR-masked).
int enc_dc_len(const ValKey& vk, int comp, int table2, int g) {
  return g <= 9 ? vk.pmt_dcl[comp][size_t(table2 - 1)][size_t(g)] : g;
}

}  // namespace

ValueSubstResult value_substitute(const CoeffImage& img, const ValKey& vk, const PosSeeds& seeds,
                                  const std::string& iid) {
  ValueSubstResult res;
  res.img = img;
  for (int c = 0; c < 3; ++c) {
    auto& blocks = res.img.comps[c].blocks;
    res.bitkey[c].reserve(blocks.size());
    res.plain_dc_len[c].reserve(blocks.size());
    for (size_t j = 0; j < blocks.size(); ++j) {
      Block& b = blocks[j];
      int i = int(j) + 1;
      const auto& table = vk.pmtv[c][size_t(sqnt(i, vk.n_pmt1) - 1)];
      for (RvPair& p : b.pairs)
        if (v_in_table(p.value)) p.value = table[size_t(v_index(p.value))];

      int g = b.dc.group;
      int el = enc_dc_len(vk, c, sqnt(i, vk.n_pmt2), g);
      // 16-bit keystream block per (image, component, block); the encrypted
      // DC is its trailing el bits.
      BitString stream =
          stm_ciph(seeds.key_dc[c], 16, tag("bitdc", component_name(c), iid, uint64_t(i)));
      BitString enc_dc = stream.low_bits(size_t(el));
      size_t mask_len = size_t(std::max(g, el));
      BitString mask = enc_dc.zext(mask_len) ^ b.dc.bits.zext(mask_len);
      res.bitkey[c].push_back(std::move(mask));
      res.plain_dc_len[c].push_back(uint8_t(g));
      b.dc = VliCode{uint8_t(el), std::move(enc_dc)};
    }
  }
  return res;
}

CoeffImage value_unsubstitute(const CoeffImage& img, const ValKey& vk, const PosKey& pk) {
  CoeffImage out = img;
  for (int c = 0; c < 3; ++c) {
    auto& blocks = out.comps[c].blocks;
    require(pk.comps[c].bitkey.size() == blocks.size() &&
                pk.comps[c].plain_dc_len.size() == blocks.size(),
            ErrorKind::key_mismatch, "poskey does not fit ciphertext");
    // Inverted substitution tables per table index.
    std::vector<std::array<int8_t, kVAlphabet>> inv(vk.pmtv[c].size());
    for (size_t t = 0; t < vk.pmtv[c].size(); ++t)
      for (int i = 0; i < kVAlphabet; ++i)
        inv[t][size_t(v_index(vk.pmtv[c][t][size_t(i)]))] = int8_t(v_from_index(i));

    for (size_t j = 0; j < blocks.size(); ++j) {
      Block& b = blocks[j];
      int i = int(j) + 1;
      const auto& table = inv[size_t(sqnt(i, vk.n_pmt1) - 1)];
      for (RvPair& p : b.pairs)
        if (v_in_table(p.value)) p.value = table[size_t(v_index(p.value))];

      int g = pk.comps[c].plain_dc_len[j];
      int el = enc_dc_len(vk, c, sqnt(i, vk.n_pmt2), g);
      const BitString& mask = pk.comps[c].bitkey[j];
      require(int(b.dc.group) == el, ErrorKind::key_mismatch, "ciphertext DC length mismatch");
      require(mask.size() == size_t(std::max(g, el)), ErrorKind::key_mismatch,
              "bitkey length mismatch");
      BitString plain = (b.dc.bits.zext(mask.size()) ^ mask).low_bits(size_t(g));
      b.dc = VliCode{uint8_t(g), std::move(plain)};
    }
  }
  return out;
}

std::pair<CoeffImage, PosKey> encrypt_coeffs(const CoeffImage& img, const std::string& iid,
                                             const ValKey& vk, const PosSeeds& seeds) {
  PosKey pk;
  pk.iid = iid;
  auto pmtb = gen_block_perms(img, seeds, iid);
  CoeffImage stage1 = block_permute(img, pmtb);
  auto pmtp = gen_intra_perms(stage1, seeds, iid);
  CoeffImage stage2 = intra_block_permute(stage1, pmtp);
  ValueSubstResult subst = value_substitute(stage2, vk, seeds, iid);
  for (int c = 0; c < 3; ++c) {
    pk.comps[c].pmtb = std::move(pmtb[c]);
    pk.comps[c].pmtp = std::move(pmtp[c]);
    pk.comps[c].bitkey = std::move(subst.bitkey[c]);
    pk.comps[c].plain_dc_len = std::move(subst.plain_dc_len[c]);
  }
  return {std::move(subst.img), std::move(pk)};
}

EncResult img_enc_with_seeds(const CoeffImage& img, const std::string& iid,
                             const std::string& owner_id, const ValKey& vk,
                             const PosSeeds& seeds) {
  auto [ct, pk] = encrypt_coeffs(img, iid, vk, seeds);
  EncResult res;
  res.enc.iid = iid;
  res.enc.owner_id = owner_id;
  res.enc.n_pmt1 = vk.n_pmt1;
  res.enc.n_pmt2 = vk.n_pmt2;
  res.enc.jpeg = encode_jpeg(ct);
  res.poskey = std::move(pk);
  return res;
}

EncResult img_enc(const CoeffImage& img, const std::string& iid, const std::string& owner_id,
                  const ValKey& vk, Rng& rng) {
  return img_enc_with_seeds(img, iid, owner_id, vk, PosSeeds::fresh(rng));
}

CoeffImage img_dec_coeffs(const CoeffImage& ct, const PosKey& pk, const ValKey& vk) {
  CoeffImage step1 = value_unsubstitute(ct, vk, pk);
  std::array<std::vector<Permutation>, 3> pmtp;
  std::array<Permutation, 3> pmtb;
  for (int c = 0; c < 3; ++c) {
    pmtp[c] = pk.comps[c].pmtp;
    pmtb[c] = pk.comps[c].pmtb;
  }
  CoeffImage step2 = intra_block_unpermute(step1, pmtp);
  return block_unpermute(step2, pmtb);
}

CoeffImage img_dec(const EncryptedImage& enc, const PosKey& pk, const ValKey& vk) {
  CoeffImage ct = decode_jpeg(enc.jpeg);
  return img_dec_coeffs(ct, pk, vk);
}

EncryptedImage trap_gen_single(const CoeffImage& query, const std::string& owner_id,
                               const ValKey& vk, const PosSeeds& seeds,
                               const std::array<SeedKey, 3>& extra_blo, const std::string& qid) {
  auto [ct, pk] = encrypt_coeffs(query, qid, vk, seeds);
  std::array<Permutation, 3> extra;
  for (int c = 0; c < 3; ++c)
    extra[c] = rand_perm(extra_blo[c], ct.comps[c].blocks.size(),
                         tag("trap_pmtb", component_name(c), qid));
  CoeffImage shuffled = block_permute(ct, extra);
  EncryptedImage out;
  out.iid = qid;
  out.owner_id = owner_id;
  out.n_pmt1 = vk.n_pmt1;
  out.n_pmt2 = vk.n_pmt2;
  out.jpeg = encode_jpeg(shuffled);
  return out;
}

std::vector<std::pair<std::string, EncryptedImage>> trap_gen(
    const CoeffImage& query, const std::vector<std::pair<std::string, const ValKey*>>& authorized,
    Rng& rng) {
  require(!authorized.empty(), ErrorKind::contract, "no authorized sources");
  std::vector<std::pair<std::string, EncryptedImage>> out;
  int n = 0;
  for (const auto& [owner, vk] : authorized) {
    PosSeeds seeds = PosSeeds::fresh(rng);
    std::array<SeedKey, 3> extra{rng.fresh_seed_key("trap_blo_Y"), rng.fresh_seed_key("trap_blo_U"),
                                 rng.fresh_seed_key("trap_blo_V")};
    out.emplace_back(owner, trap_gen_single(query, owner, *vk, seeds, extra,
                                            "q" + std::to_string(n++)));
  }
  return out;
}

namespace {

double log2_factorial(size_t n) {
  double s = 0;
  for (size_t i = 2; i <= n; ++i) s += std::log2(double(i));
  return s;
}

}  // namespace

SecurityStrength security_strength(const PosKey& pk, int n_pmt1, int n_pmt2) {
  SecurityStrength s;
  s.table_v_bits = 3.0 * n_pmt1 * log2_factorial(20);
  s.table_dcl_bits = 3.0 * n_pmt2 * log2_factorial(10);
  for (int c = 0; c < 3; ++c) {
    s.blknum_bits += log2_factorial(pk.comps[c].pmtb.size());
    for (const auto& p : pk.comps[c].pmtp) s.blksize_bits += log2_factorial(p.size());
    for (const auto& b : pk.comps[c].bitkey) s.xor_bits += double(b.size());
  }
  return s;
}

std::array<uint64_t, kVAlphabet> v_histogram(const CoeffImage& img, int comp) {
  std::array<uint64_t, kVAlphabet> h{};
  for (const Block& b : img.comps[comp].blocks)
    for (const RvPair& p : b.pairs)
      if (v_in_table(p.value)) ++h[size_t(v_index(p.value))];
  return h;
}

double v_hist_chi_square(const CoeffImage& img) {
  std::array<uint64_t, kVAlphabet> pooled{};
  for (int c = 0; c < 3; ++c) {
    auto h = v_histogram(img, c);
    for (int i = 0; i < kVAlphabet; ++i) pooled[size_t(i)] += h[size_t(i)];
  }
  uint64_t total = 0;
  for (auto v : pooled) total += v;
  if (total == 0) return 0.0;
  double expect = double(total) / kVAlphabet;
  double chi = 0;
  for (auto v : pooled) {
    double d = double(v) - expect;
    chi += d * d / expect;
  }
  return chi;
}

// --------------------------------------------------------------------------
// Containers ("JESK" family).

namespace {
constexpr char kValMagic[4] = {'J', 'E', 'S', 'V'};
constexpr char kPosMagic[4] = {'J', 'E', 'S', 'P'};
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
}  // namespace

std::vector<uint8_t> serialize_val_key(const ValKey& vk) {
  Writer w;
  put_magic(w, kValMagic, kKeyVersion);
  w.u32(uint32_t(vk.n_pmt1));
  w.u32(uint32_t(vk.n_pmt2));
  for (int c = 0; c < 3; ++c) {
    for (const auto& t : vk.pmtv[c])
      for (int8_t v : t) w.u8(uint8_t(v));
    for (const auto& t : vk.pmt_dcl[c])
      for (uint8_t v : t) w.u8(v);
  }
  return w.take();
}

ValKey deserialize_val_key(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kValMagic, kKeyVersion);
  ValKey vk;
  vk.n_pmt1 = int(r.u32());
  vk.n_pmt2 = int(r.u32());
  require(vk.n_pmt1 >= 1 && vk.n_pmt2 >= 1 && vk.n_pmt1 <= 1000 && vk.n_pmt2 <= 1000,
          ErrorKind::format, "bad table counts");
  for (int c = 0; c < 3; ++c) {
    vk.pmtv[c].resize(size_t(vk.n_pmt1));
    for (auto& t : vk.pmtv[c])
      for (auto& v : t) v = int8_t(r.u8());
    vk.pmt_dcl[c].resize(size_t(vk.n_pmt2));
    for (auto& t : vk.pmt_dcl[c])
      for (auto& v : t) v = r.u8();
  }
  return vk;
}

std::vector<uint8_t> serialize_pos_key(const PosKey& pk) {
  Writer w;
  put_magic(w, kPosMagic, kKeyVersion);
  w.str(pk.iid);
  for (int c = 0; c < 3; ++c) {
    const auto& comp = pk.comps[c];
    put_perm(w, comp.pmtb);
    w.u32(uint32_t(comp.pmtp.size()));
    for (const auto& p : comp.pmtp) put_perm(w, p);
    w.u32(uint32_t(comp.bitkey.size()));
    for (const auto& b : comp.bitkey) w.bits(b);
    w.u32(uint32_t(comp.plain_dc_len.size()));
    for (uint8_t g : comp.plain_dc_len) w.u8(g);
  }
  return w.take();
}

PosKey deserialize_pos_key(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kPosMagic, kKeyVersion);
  PosKey pk;
  pk.iid = r.str();
  for (int c = 0; c < 3; ++c) {
    auto& comp = pk.comps[c];
    comp.pmtb = get_perm(r);
    comp.pmtp.resize(r.u32());
    for (auto& p : comp.pmtp) p = get_perm(r);
    comp.bitkey.resize(r.u32());
    for (auto& b : comp.bitkey) b = r.bits();
    comp.plain_dc_len.resize(r.u32());
    for (auto& g : comp.plain_dc_len) g = r.u8();
  }
  return pk;
}

}  // namespace jes
