#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "jes/error.hpp"
#include "jes/image_cipher.hpp"
#include "jes/jpeg_codec.hpp"
#include "support/corpus.hpp"
#include "support/jpegref.hpp"

using namespace jes;
namespace jt = jes::test;

namespace {

Rng fresh_rng(const std::string& label) {
  SeedKey k;
  k.secret.fill(0x5A);
  k.role = label;
  return Rng(k, tag(label));
}

CoeffImage sample_image(int cat = 2, int w = 96, int h = 72, bool s420 = true) {
  return decode_jpeg(jt::compress_jpeg(jt::make_texture(w, h, cat, 0), 80, s420));
}

// Multiset of block contents, ignoring order.
std::multiset<std::string> block_multiset(const CoeffImage& img) {
  std::multiset<std::string> ms;
  for (int c = 0; c < 3; ++c)
    for (const Block& b : img.comps[c].blocks) {
      std::string s = std::string(component_name(c)) + "|" + std::to_string(b.dc.group) + "|" +
                      b.dc.bits.to_string() + "|";
      std::multiset<std::string> pairs;
      for (const auto& p : b.pairs)
        pairs.insert(std::to_string(p.run) + ":" + std::to_string(p.value));
      for (const auto& p : pairs) s += p + ";";
      ms.insert(s);
    }
  return ms;
}

}  // namespace

TEST_CASE("gen_val_key determinism and bijectivity") {
  Rng rng = fresh_rng("valkey");
  ValSeeds seeds = ValSeeds::fresh(rng);
  ValKey a = gen_val_key(seeds, 5, 5);
  ValKey b = gen_val_key(seeds, 5, 5);
  CHECK(a == b);
  for (int c = 0; c < 3; ++c) {
    for (const auto& t : a.pmtv[c]) {
      std::set<int> img(t.begin(), t.end());
      CHECK(img.size() == 20);
      for (int v : t) CHECK(v_in_table(v));
    }
    for (const auto& t : a.pmt_dcl[c]) {
      std::set<int> img(t.begin(), t.end());
      CHECK(img.size() == 10);
    }
  }
  CHECK_THROWS_AS(gen_val_key(seeds, 0, 5), Error);
}

TEST_CASE("block_permute moves whole blocks, DC travels along") {
  CoeffImage img = sample_image();
  std::array<Permutation, 3> pmtb;
  for (int c = 0; c < 3; ++c) {
    size_t n = img.comps[c].blocks.size();
    std::vector<uint32_t> m(n);
    for (size_t i = 0; i < n; ++i) m[i] = uint32_t((i + 1) % n + 1);  // rotation
    pmtb[c] = Permutation(std::move(m));
  }
  CoeffImage out = block_permute(img, pmtb);
  for (int c = 0; c < 3; ++c) {
    CHECK(out.comps[c].blocks.size() == img.comps[c].blocks.size());
    CHECK(out.comps[c].blocks[0] == img.comps[c].blocks[1 % img.comps[c].blocks.size()]);
  }
  CHECK(block_unpermute(out, pmtb) == img);

  std::array<Permutation, 3> ident{
      Permutation::identity(img.comps[0].blocks.size()),
      Permutation::identity(img.comps[1].blocks.size()),
      Permutation::identity(img.comps[2].blocks.size())};
  CHECK(block_permute(img, ident) == img);

  std::array<Permutation, 3> wrong{Permutation::identity(1), Permutation::identity(1),
                                   Permutation::identity(1)};
  CHECK_THROWS_AS(block_permute(img, wrong), Error);
}

TEST_CASE("block_permute 4-block example") {
  // blk'[i] = blk[pmtb[i]]
  CoeffImage img = decode_jpeg(jt::compress_jpeg(jt::make_texture(16, 16, 1, 0), 85, false));
  REQUIRE(img.comps[0].blocks.size() == 4);
  std::array<Permutation, 3> pmtb{Permutation({3, 1, 4, 2}), Permutation::identity(4),
                                  Permutation::identity(4)};
  CoeffImage out = block_permute(img, pmtb);
  CHECK(out.comps[0].blocks[0] == img.comps[0].blocks[2]);
  CHECK(out.comps[0].blocks[1] == img.comps[0].blocks[0]);
  CHECK(out.comps[0].blocks[2] == img.comps[0].blocks[3]);
  CHECK(out.comps[0].blocks[3] == img.comps[0].blocks[1]);
}

TEST_CASE("intra_block_permute reorders pairs and keeps EOB terminal") {
  CoeffImage img = sample_image(4);
  Rng rng = fresh_rng("intra");
  PosSeeds seeds = PosSeeds::fresh(rng);
  auto pmtp = gen_intra_perms(img, seeds, "iid-1");
  CoeffImage out = intra_block_permute(img, pmtp);
  for (int c = 0; c < 3; ++c) {
    for (size_t j = 0; j < img.comps[c].blocks.size(); ++j) {
      const Block& a = img.comps[c].blocks[j];
      const Block& b = out.comps[c].blocks[j];
      CHECK(a.eob_present == b.eob_present);
      CHECK(a.dc == b.dc);
      std::multiset<int> av, bv;
      for (const auto& p : a.pairs) av.insert(p.value * 100 + p.run);
      for (const auto& p : b.pairs) bv.insert(p.value * 100 + p.run);
      CHECK(av == bv);
      if (a.pairs.size() <= 1) CHECK(a == b);
    }
  }
  CHECK(intra_block_unpermute(out, pmtp) == img);
}

TEST_CASE("value_substitute: table rules, DC length classes, pass-through") {
  CoeffImage img = sample_image(6);
  Rng rng = fresh_rng("subst");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);
  PosSeeds ps = PosSeeds::fresh(rng);
  ValueSubstResult res = value_substitute(img, vk, ps, "iid-2");

  for (int c = 0; c < 3; ++c) {
    REQUIRE(res.bitkey[c].size() == img.comps[c].blocks.size());
    for (size_t j = 0; j < img.comps[c].blocks.size(); ++j) {
      const Block& plain = img.comps[c].blocks[j];
      const Block& enc = res.img.comps[c].blocks[j];
      int i = int(j) + 1;
      const auto& table = vk.pmtv[c][size_t(sqnt(i, 5) - 1)];
      REQUIRE(plain.pairs.size() == enc.pairs.size());
      for (size_t p = 0; p < plain.pairs.size(); ++p) {
        CHECK(plain.pairs[p].run == enc.pairs[p].run);  // r untouched
        int v = plain.pairs[p].value;
        if (v_in_table(v))
          CHECK(enc.pairs[p].value == table[size_t(v_index(v))]);
        else
          CHECK(enc.pairs[p].value == v);  // out-of-range pass-through
      }
      int g = plain.dc.group;
      int expect_len = g <= 9 ? vk.pmt_dcl[c][size_t(sqnt(i, 5) - 1)][size_t(g)] : g;
      CHECK(int(enc.dc.group) == expect_len);
      CHECK(enc.dc.bits.size() == size_t(expect_len));
      CHECK(res.bitkey[c][j].size() == size_t(std::max(g, expect_len)));
      CHECK(res.plain_dc_len[c][j] == g);
    }
  }
}

TEST_CASE("img_enc/img_dec round trip, fresh keys differ, reference decoder accepts") {
  Rng rng = fresh_rng("roundtrip");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);

  for (int cat = 0; cat < 3; ++cat) {
    CoeffImage img = sample_image(cat, 80, 56, cat % 2 == 0);
    EncResult e1 = img_enc(img, "img-" + std::to_string(cat), "owner1", vk, rng);
    EncResult e2 = img_enc(img, "img-" + std::to_string(cat), "owner1", vk, rng);
    CHECK(e1.enc.jpeg != e2.enc.jpeg);  // fresh one-time position keys
    CHECK(jt::ref_decodes_ok(e1.enc.jpeg));
    CHECK(img_dec(e1.enc, e1.poskey, vk) == img);
    CHECK(img_dec(e2.enc, e2.poskey, vk) == img);
  }
}

TEST_CASE("img_dec with wrong PosKey fails or differs") {
  Rng rng = fresh_rng("wrongkey");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);
  CoeffImage img = sample_image(1);
  EncResult e = img_enc(img, "a", "o", vk, rng);
  EncResult other = img_enc(img, "b", "o", vk, rng);
  bool detected = false;
  try {
    CoeffImage out = img_dec(e.enc, other.poskey, vk);
    detected = !(out == img);
  } catch (const Error& err) {
    detected = err.kind() == ErrorKind::key_mismatch;
  }
  CHECK(detected);
}

TEST_CASE("encryption preserves structural multisets per block") {
  Rng rng = fresh_rng("invariants");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);
  CoeffImage img = sample_image(3);
  auto [ct, pk] = encrypt_coeffs(img, "inv", vk, PosSeeds::fresh(rng));

  for (int c = 0; c < 3; ++c) {
    CHECK(ct.comps[c].blocks.size() == img.comps[c].blocks.size());
    // per-component multiset of (pair count, r multiset, in/out class multiset)
    auto shape = [](const Component& comp) {
      std::multiset<std::string> ms;
      for (const Block& b : comp.blocks) {
        std::multiset<int> runs;
        std::multiset<int> cls;
        for (const auto& p : b.pairs) {
          runs.insert(p.run);
          cls.insert(p.is_zrl() ? 2 : (v_in_table(p.value) ? 0 : 1));
        }
        std::string s = std::to_string(b.pairs.size()) + "|";
        for (int r : runs) s += std::to_string(r) + ",";
        s += "|";
        for (int k : cls) s += std::to_string(k);
        ms.insert(s);
      }
      return ms;
    };
    CHECK(shape(ct.comps[c]) == shape(img.comps[c]));
  }
}

TEST_CASE("trapdoor: multiset equality before the extra permutation, decodable, distinct") {
  Rng rng = fresh_rng("trap");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk1 = gen_val_key(vs, 5, 5);
  ValSeeds vs2 = ValSeeds::fresh(rng);
  ValKey vk2 = gen_val_key(vs2, 5, 5);
  CoeffImage query = sample_image(5);

  std::vector<std::pair<std::string, const ValKey*>> owners{{"o1", &vk1}, {"o2", &vk2}};
  auto traps = trap_gen(query, owners, rng);
  REQUIRE(traps.size() == 2);
  CHECK(traps[0].second.jpeg != traps[1].second.jpeg);
  for (const auto& [oid, enc] : traps) CHECK(jt::ref_decodes_ok(enc.jpeg));
  CHECK_THROWS_AS(trap_gen(query, {}, rng), Error);

  // Controlled seeds: trapdoor blocks = img_enc blocks as a multiset.
  PosSeeds seeds = PosSeeds::fresh(rng);
  std::array<SeedKey, 3> extra{rng.fresh_seed_key("eY"), rng.fresh_seed_key("eU"),
                               rng.fresh_seed_key("eV")};
  EncryptedImage trap = trap_gen_single(query, "o1", vk1, seeds, extra, "q0");
  auto [ct, pk] = encrypt_coeffs(query, "q0", vk1, seeds);
  CHECK(block_multiset(decode_jpeg(trap.jpeg)) == block_multiset(ct));
}

TEST_CASE("histogram property: N_pmt1 = 1 is an exact bin permutation") {
  Rng rng = fresh_rng("hist1");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 1, 1);
  CoeffImage img = sample_image(7);
  auto [ct, pk] = encrypt_coeffs(img, "h1", vk, PosSeeds::fresh(rng));

  for (int c = 0; c < 3; ++c) {
    auto plain_h = v_histogram(img, c);
    auto enc_h = v_histogram(ct, c);
    const auto& table = vk.pmtv[c][0];
    std::array<uint64_t, kVAlphabet> mapped{};
    for (int i = 0; i < kVAlphabet; ++i)
      mapped[size_t(v_index(table[size_t(i)]))] = plain_h[size_t(i)];
    CHECK(enc_h == mapped);
  }
}

TEST_CASE("histogram property: N_pmt1 = 5 reconstructs from residue-class sub-histograms") {
  Rng rng = fresh_rng("hist5");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);
  CoeffImage img = sample_image(8);
  PosSeeds seeds = PosSeeds::fresh(rng);
  auto [ct, pk] = encrypt_coeffs(img, "h5", vk, seeds);

  // Build the same position-permuted plaintext to fix block order, then
  // check: enc_hist[w] = sum over tables t of subhist_t[table_t^{-1}(w)].
  auto pmtb = gen_block_perms(img, seeds, "h5");
  CoeffImage pos1 = block_permute(img, pmtb);
  for (int c = 0; c < 3; ++c) {
    std::array<std::array<uint64_t, kVAlphabet>, 5> sub{};
    for (size_t j = 0; j < pos1.comps[c].blocks.size(); ++j) {
      int t = sqnt(int(j) + 1, 5) - 1;
      for (const auto& p : pos1.comps[c].blocks[j].pairs)
        if (v_in_table(p.value)) ++sub[size_t(t)][size_t(v_index(p.value))];
    }
    std::array<uint64_t, kVAlphabet> reconstructed{};
    for (int t = 0; t < 5; ++t) {
      const auto& table = vk.pmtv[c][size_t(t)];
      for (int i = 0; i < kVAlphabet; ++i)
        reconstructed[size_t(v_index(table[size_t(i)]))] += sub[size_t(t)][size_t(i)];
    }
    CHECK(v_histogram(ct, c) == reconstructed);
  }
}

TEST_CASE("security strength accounting") {
  // toy: one 8x8 block per component
  CoeffImage img = decode_jpeg(jt::compress_jpeg(jt::make_texture(8, 8, 2, 0), 85, false));
  Rng rng = fresh_rng("sec");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);
  auto [ct, pk] = encrypt_coeffs(img, "sec", vk, PosSeeds::fresh(rng));
  SecurityStrength s = security_strength(pk, 5, 5);

  // table terms: 15*log2(20!) + 15*log2(10!) ~ 1243 bits
  CHECK(s.table_v_bits + s.table_dcl_bits == doctest::Approx(1243.04).epsilon(0.001));
  // blknum = 1 per component -> log2(1!) = 0
  CHECK(s.blknum_bits == 0.0);
  // hand-computed: sum over blocks of log2(blksize!) and mask bits
  double blksize_bits = 0;
  double xor_bits = 0;
  auto log2f = [](size_t n) {
    double r = 0;
    for (size_t i = 2; i <= n; ++i) r += std::log2(double(i));
    return r;
  };
  for (int c = 0; c < 3; ++c) {
    for (const auto& p : pk.comps[c].pmtp) blksize_bits += log2f(p.size());
    for (const auto& b : pk.comps[c].bitkey) xor_bits += double(b.size());
  }
  CHECK(s.blksize_bits == doctest::Approx(blksize_bits));
  CHECK(s.xor_bits == doctest::Approx(xor_bits));
  CHECK(s.total() == doctest::Approx(s.table_v_bits + s.table_dcl_bits + s.blknum_bits +
                                     blksize_bits + xor_bits));

  // monotonicity: a larger image strictly dominates
  CoeffImage big = sample_image(2, 160, 120, false);
  auto [ct2, pk2] = encrypt_coeffs(big, "sec2", vk, PosSeeds::fresh(rng));
  CHECK(security_strength(pk2, 5, 5).total() > s.total());
}

TEST_CASE("value key serialization round trip") {
  Rng rng = fresh_rng("ser");
  ValSeeds vs = ValSeeds::fresh(rng);
  ValKey vk = gen_val_key(vs, 5, 5);
  CHECK(deserialize_val_key(serialize_val_key(vk)) == vk);

  CoeffImage img = sample_image(0, 32, 32, false);
  auto [ct, pk] = encrypt_coeffs(img, "ser", vk, PosSeeds::fresh(rng));
  PosKey back = deserialize_pos_key(serialize_pos_key(pk));
  CHECK(back == pk);
}
