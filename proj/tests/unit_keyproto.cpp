#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "jes/error.hpp"
#include "jes/key_protocol.hpp"
#include "jes/jpeg_codec.hpp"
#include "support/corpus.hpp"

using namespace jes;
namespace jt = jes::test;

namespace {

Rng fresh_rng(const std::string& label) {
  SeedKey k;
  k.secret.fill(0xC3);
  k.role = label;
  return Rng(k, tag(label));
}

struct Fixture {
  Rng rng = fresh_rng("keyproto");
  ValKey val_key;
  CoeffImage img;
  PosKey poskey;
  EncryptedImage enc_img;
  UserKey u_owner;
  UserKey u_user;
  std::array<uint8_t, 32> mac_key;

  Fixture() {
    ValSeeds vs = ValSeeds::fresh(rng);
    val_key = gen_val_key(vs, 5, 5);
    img = decode_jpeg(jt::compress_jpeg(jt::make_texture(72, 48, 3, 0), 80, true));
    EncResult e = img_enc(img, "img-1", "o1", val_key, rng);
    poskey = e.poskey;
    enc_img = e.enc;
    u_owner = gen_user_key(UserKeySeeds::fresh(rng));
    u_user = gen_user_key(UserKeySeeds::fresh(rng));
    mac_key = pos_key_mac_key(val_key, "img-1");
  }
};

}  // namespace

TEST_CASE("gen_user_key: determinism, identity at size 1, bijective families") {
  Rng rng = fresh_rng("gen");
  UserKeySeeds seeds = UserKeySeeds::fresh(rng);
  UserKey a = gen_user_key(seeds);
  UserKey b = gen_user_key(seeds);
  CHECK(a == b);
  for (int c = 0; c < 3; ++c) {
    CHECK(a.upmtp[c][0].is_identity());
    for (int s = 0; s < kMaxPairs; ++s) {
      CHECK(a.upmtp[c][size_t(s)].size() == size_t(s + 1));
      // constructor validated bijectivity; exercise the inverse as a check
      CHECK(a.upmtp[c][size_t(s)].inverse().size() == size_t(s + 1));
    }
    for (int l = 0; l < kMaxMaskBits; ++l) CHECK(a.ubitkey[c][size_t(l)].size() == size_t(l + 1));
  }
  // lazy upmtb: deterministic per size
  CHECK(a.upmtb_for(0, 37) == b.upmtb_for(0, 37));
  CHECK(a.upmtb_for(0, 37).size() == 37);
}

TEST_CASE("img_key_enc: identity user key passes data through unchanged") {
  Fixture f;
  // Build an identity-valued user key by combining a key with itself (dec).
  UserKey ident = user_key_dec(f.u_owner, f.u_owner);
  for (int c = 0; c < 3; ++c) {
    for (const auto& [n, p] : ident.upmtb[c]) CHECK(p.is_identity());
    for (const auto& p : ident.upmtp[c]) CHECK(p.is_identity());
    for (const auto& b : ident.ubitkey[c]) {
      for (size_t i = 0; i < b.size(); ++i) CHECK_FALSE(b[i]);
    }
  }
  // materialize needed sizes in the identity key
  for (int c = 0; c < 3; ++c)
    ident.upmtb[c].emplace(uint32_t(f.poskey.comps[c].pmtb.size()),
                           Permutation::identity(f.poskey.comps[c].pmtb.size()));
  EncPosKey e = img_key_enc(f.poskey, ident, f.mac_key);
  for (int c = 0; c < 3; ++c) {
    CHECK(e.comps[c].pmtb == f.poskey.comps[c].pmtb);
    CHECK(e.comps[c].pmtp == f.poskey.comps[c].pmtp);
    CHECK(e.comps[c].bitkey == f.poskey.comps[c].bitkey);
    // dc-length bytes are masked with an all-zero-derived mask: unchanged
    for (size_t j = 0; j < e.comps[c].masked_dc_len.size(); ++j)
      CHECK(e.comps[c].masked_dc_len[j] == f.poskey.comps[c].plain_dc_len[j]);
  }
}

TEST_CASE("img_key_enc shape preservation and non-idempotence") {
  Fixture f;
  EncPosKey e = img_key_enc(f.poskey, f.u_owner, f.mac_key);
  for (int c = 0; c < 3; ++c) {
    CHECK(e.comps[c].pmtb.size() == f.poskey.comps[c].pmtb.size());
    REQUIRE(e.comps[c].pmtp.size() == f.poskey.comps[c].pmtp.size());
    for (size_t j = 0; j < e.comps[c].pmtp.size(); ++j)
      CHECK(e.comps[c].pmtp[j].size() == f.poskey.comps[c].pmtp[j].size());
    CHECK(e.comps[c].pmtb != f.poskey.comps[c].pmtb);  // overwhelmingly likely
  }
  // applying twice does not return the input (dec_perm is not an involution)
  PosKey twice;
  twice.iid = e.iid;
  for (int c = 0; c < 3; ++c) {
    twice.comps[c].pmtb = e.comps[c].pmtb;
    twice.comps[c].pmtp = e.comps[c].pmtp;
    twice.comps[c].bitkey = e.comps[c].bitkey;
    twice.comps[c].plain_dc_len = e.comps[c].masked_dc_len;
  }
  EncPosKey e2 = img_key_enc(twice, f.u_owner, f.mac_key);
  CHECK(e2.comps[0].pmtb != f.poskey.comps[0].pmtb);
}

TEST_CASE("user_key_dec(a,a) is the identity key; xor branch self-inverse") {
  Fixture f;
  UserKey d = user_key_dec(f.u_owner, f.u_owner);
  for (int c = 0; c < 3; ++c) {
    for (const auto& p : d.upmtp[c]) CHECK(p.is_identity());
    for (const auto& b : d.ubitkey[c])
      for (size_t i = 0; i < b.size(); ++i) CHECK_FALSE(b[i]);
  }
  UserKey enc = user_key_enc(f.u_owner, f.u_user);
  UserKey dec = user_key_dec(f.u_owner, f.u_user);
  for (int c = 0; c < 3; ++c)
    for (int l = 0; l < kMaxMaskBits; ++l)
      CHECK(enc.ubitkey[c][size_t(l)] == dec.ubitkey[c][size_t(l)]);
}

TEST_CASE("authorization identity: dec(enc(a,b), b) = a on permutation entries") {
  Fixture f;
  UserKey link = user_key_enc(f.u_owner, f.u_user);
  UserKey back = user_key_dec(link, f.u_user);
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < kMaxPairs; ++s)
      CHECK(back.upmtp[c][size_t(s)] == f.u_owner.upmtp[c][size_t(s)]);
    for (int l = 0; l < kMaxMaskBits; ++l)
      CHECK(back.ubitkey[c][size_t(l)] == f.u_owner.ubitkey[c][size_t(l)]);
  }
}

TEST_CASE("end-to-end key recovery: owner -> KMC -> user chain") {
  Fixture f;
  EncPosKey stored = img_key_enc(f.poskey, f.u_owner, f.mac_key);  // at KMC
  UserKey link = user_key_enc(f.u_owner, f.u_user);               // at KMC
  EncPosKey transformed = kmc_transform(stored, link);
  PosKey recovered = user_recover_pos_key(transformed, f.u_user, f.mac_key);
  CHECK(recovered == f.poskey);
  CHECK(img_dec(f.enc_img, recovered, f.val_key) == f.img);
}

TEST_CASE("wrong user key fails the MAC; tampering fails the MAC") {
  Fixture f;
  EncPosKey stored = img_key_enc(f.poskey, f.u_owner, f.mac_key);
  UserKey link = user_key_enc(f.u_owner, f.u_user);
  EncPosKey transformed = kmc_transform(stored, link);

  Rng rng = fresh_rng("other");
  UserKey wrong = gen_user_key(UserKeySeeds::fresh(rng));
  for (int c = 0; c < 3; ++c)
    wrong.upmtb_for(c, uint32_t(f.poskey.comps[c].pmtb.size()));
  CHECK_THROWS_AS(user_recover_pos_key(transformed, wrong, f.mac_key), Error);

  EncPosKey tampered = transformed;
  tampered.comps[0].masked_dc_len[0] ^= 0x01;
  CHECK_THROWS_AS(user_recover_pos_key(tampered, f.u_user, f.mac_key), Error);
}

TEST_CASE("group path: IncUsrKey chain recovers the position key") {
  Fixture f;
  Rng rng = fresh_rng("group");
  UserKey u_group = gen_user_key(UserKeySeeds::fresh(rng));
  UserKey u_guser = gen_user_key(UserKeySeeds::fresh(rng));

  EncPosKey stored = img_key_enc(f.poskey, f.u_owner, f.mac_key);
  UserKey inc = derive_inc_usr_key(f.u_owner, u_group);
  UserKey glink = user_key_enc(u_group, u_guser);
  EncPosKey step1 = kmc_transform(stored, inc);
  EncPosKey step2 = kmc_transform(step1, glink);
  PosKey recovered = user_recover_pos_key(step2, u_guser, f.mac_key);
  CHECK(recovered == f.poskey);

  // identity delta when owner == group
  UserKey self_inc = derive_inc_usr_key(f.u_owner, f.u_owner);
  for (int c = 0; c < 3; ++c)
    for (const auto& p : self_inc.upmtp[c]) CHECK(p.is_identity());
}

TEST_CASE("IncValKey: CS re-encryption equals direct encryption under the group key") {
  Rng rng = fresh_rng("incval");
  ValSeeds vo = ValSeeds::fresh(rng);
  ValSeeds vg = ValSeeds::fresh(rng);
  ValKey vko = gen_val_key(vo, 5, 5);
  ValKey vkg = gen_val_key(vg, 5, 5);
  CoeffImage img = decode_jpeg(jt::compress_jpeg(jt::make_texture(64, 64, 5, 0), 80, false));
  PosSeeds seeds = PosSeeds::fresh(rng);

  auto [ct_owner, pk] = encrypt_coeffs(img, "gimg", vko, seeds);
  auto [ct_group_direct, pk_direct] = encrypt_coeffs(img, "gimg", vkg, seeds);

  IncValKey inc = derive_inc_val_key(vko, vkg);
  CoeffImage ct_reenc = cs_reencrypt_for_group(ct_owner, inc);

  for (int c = 0; c < 3; ++c) {
    REQUIRE(ct_reenc.comps[c].blocks.size() == ct_group_direct.comps[c].blocks.size());
    for (size_t j = 0; j < ct_reenc.comps[c].blocks.size(); ++j) {
      const Block& a = ct_reenc.comps[c].blocks[j];
      const Block& b = ct_group_direct.comps[c].blocks[j];
      REQUIRE(a.pairs.size() == b.pairs.size());
      for (size_t p = 0; p < a.pairs.size(); ++p) CHECK(a.pairs[p] == b.pairs[p]);
      CHECK(a.dc.group == b.dc.group);  // DC length classes converted
    }
  }

  // identity increment leaves the ciphertext unchanged
  IncValKey ident = derive_inc_val_key(vko, vko);
  CHECK(cs_reencrypt_for_group(ct_owner, ident) == ct_owner);

  // group bitkeys let the user decrypt the re-encrypted image with vkg
  auto gbk = group_bitkeys(pk, vko, vkg, seeds);
  PosKey pk_g = pk;
  for (int c = 0; c < 3; ++c) pk_g.comps[c].bitkey = gbk[c];
  CHECK(img_dec_coeffs(ct_reenc, pk_g, vkg) == img);

  // table-count mismatch is a contract error
  ValKey vk3 = gen_val_key(vo, 3, 3);
  CHECK_THROWS_AS(derive_inc_val_key(vk3, vkg), Error);
}

TEST_CASE("wrap/unwrap: round trip, bit flips and wrong keys fail") {
  Fixture f;
  EncPosKey stored = img_key_enc(f.poskey, f.u_owner, f.mac_key);
  Rng rng = fresh_rng("wrap");
  std::array<uint8_t, 32> key = rng.bytes32();
  std::array<uint8_t, 12> nonce = rng.bytes12();
  auto env = wrap_for_group(stored, key, nonce);
  CHECK(unwrap_for_group(env, key) == stored);

  for (int t = 0; t < 16; ++t) {
    auto bad = env;
    bad[size_t(rng.uniform(bad.size()))] ^= uint8_t(1 + rng.uniform(255));
    CHECK_THROWS_AS(unwrap_for_group(bad, key), Error);
    std::array<uint8_t, 32> wrong = rng.bytes32();
    CHECK_THROWS_AS(unwrap_for_group(env, wrong), Error);
  }
}


TEST_CASE("no single store suffices: a second witness matches the KMC observables") {
  // The KMC+CS view is (ImgPosKey', link). For any alternative owner key
  // U', setting pos' = enc_perm(O, U') and U_user' = enc_perm(U'inv, link)
  // reproduces both observables, so they do not determine PosKey.
  Fixture f;
  EncPosKey observed = img_key_enc(f.poskey, f.u_owner, f.mac_key);
  UserKey link = user_key_enc(f.u_owner, f.u_user);

  Rng rng = fresh_rng("witness");
  UserKey alt_owner = gen_user_key(UserKeySeeds::fresh(rng));
  for (int c = 0; c < 3; ++c)
    alt_owner.upmtb_for(c, uint32_t(f.poskey.comps[c].pmtb.size()));
  REQUIRE_FALSE(alt_owner == f.u_owner);

  PosKey alt_pos;
  alt_pos.iid = f.poskey.iid;
  UserKey alt_user;
  for (int c = 0; c < 3; ++c) {
    uint32_t n = uint32_t(f.poskey.comps[c].pmtb.size());
    const Permutation& ao = alt_owner.upmtb_for(c, n);
    alt_pos.comps[c].pmtb = enc_perm(observed.comps[c].pmtb, ao);
    for (const Permutation& p : observed.comps[c].pmtp) {
      if (p.empty())
        alt_pos.comps[c].pmtp.emplace_back();
      else
        alt_pos.comps[c].pmtp.push_back(enc_perm(p, alt_owner.upmtp[c][p.size() - 1]));
    }
    for (const BitString& b : observed.comps[c].bitkey) {
      if (b.empty())
        alt_pos.comps[c].bitkey.emplace_back();
      else
        alt_pos.comps[c].bitkey.push_back(b ^ alt_owner.ubitkey[c][b.size() - 1]);
    }
    for (size_t j = 0; j < observed.comps[c].masked_dc_len.size(); ++j)
      alt_pos.comps[c].plain_dc_len.push_back(observed.comps[c].masked_dc_len[j] ^
                                              alt_owner.dc_len_mask(c, j));

    alt_user.upmtb[c].emplace(n, enc_perm(ao.inverse(), link.upmtb[c].at(n)));
    for (int s = 0; s < kMaxPairs; ++s)
      alt_user.upmtp[c].push_back(
          enc_perm(alt_owner.upmtp[c][size_t(s)].inverse(), link.upmtp[c][size_t(s)]));
    for (int l = 0; l < kMaxMaskBits; ++l)
      alt_user.ubitkey[c].push_back(alt_owner.ubitkey[c][size_t(l)] ^ link.ubitkey[c][size_t(l)]);
  }
  REQUIRE_FALSE(alt_pos == f.poskey);

  EncPosKey alt_observed = img_key_enc(alt_pos, alt_owner, f.mac_key);
  UserKey alt_link = user_key_enc(alt_owner, alt_user);
  for (int c = 0; c < 3; ++c) {
    CHECK(alt_observed.comps[c].pmtb == observed.comps[c].pmtb);
    CHECK(alt_observed.comps[c].pmtp == observed.comps[c].pmtp);
    CHECK(alt_observed.comps[c].bitkey == observed.comps[c].bitkey);
    CHECK(alt_observed.comps[c].masked_dc_len == observed.comps[c].masked_dc_len);
    CHECK(alt_link.upmtb[c].at(uint32_t(f.poskey.comps[c].pmtb.size())) ==
          link.upmtb[c].at(uint32_t(f.poskey.comps[c].pmtb.size())));
    for (int s = 0; s < kMaxPairs; ++s)
      CHECK(alt_link.upmtp[c][size_t(s)] == link.upmtp[c][size_t(s)]);
    for (int l = 0; l < kMaxMaskBits; ++l)
      CHECK(alt_link.ubitkey[c][size_t(l)] == link.ubitkey[c][size_t(l)]);
  }
}

TEST_CASE("enc pos key and user key serialization round trips") {
  Fixture f;
  EncPosKey e = img_key_enc(f.poskey, f.u_owner, f.mac_key);
  CHECK(deserialize_enc_pos_key(serialize_enc_pos_key(e)) == e);
  UserKey link = user_key_enc(f.u_owner, f.u_user);
  UserKey back = deserialize_user_key(serialize_user_key(link));
  CHECK(back == link);
  CHECK_FALSE(back.seeds.has_value());
  UserKey seeded = deserialize_user_key(serialize_user_key(f.u_owner));
  CHECK(seeded.seeds.has_value());
  CHECK(seeded.upmtb_for(1, 999) == f.u_owner.upmtb_for(1, 999));
}

TEST_CASE("missing size entry in a seedless key is a contract error") {
  Fixture f;
  UserKey link = user_key_enc(f.u_owner, f.u_user);  // no seeds
  CHECK_THROWS_AS(link.upmtb_for(0, 123456), Error);
}
