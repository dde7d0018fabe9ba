#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "jes/coeff_image.hpp"
#include "jes/perm.hpp"

namespace jes {

// Substitution alphabet for v values: [-10,-1] ∪ [1,10], 20 symbols.
inline constexpr int kVAlphabet = 20;
inline bool v_in_table(int v) { return v != 0 && v >= -10 && v <= 10; }
inline int v_index(int v) { return v < 0 ? v + 10 : v + 9; }
inline int v_from_index(int i) { return i < 10 ? i - 10 : i - 9; }

// Per-owner value key: pmtv tables over the 20-symbol alphabet and pmtDCL
// tables over DC group indices [0,9].
struct ValKey {
  int n_pmt1 = 5;
  int n_pmt2 = 5;
  std::array<std::vector<std::array<int8_t, kVAlphabet>>, 3> pmtv;    // [comp][table][v_index]
  std::array<std::vector<std::array<uint8_t, 10>>, 3> pmt_dcl;        // [comp][table][g]

  bool operator==(const ValKey&) const = default;
};

// Seeds 𝒦_v; unique per owner.
struct ValSeeds {
  std::array<SeedKey, 3> key_v;
  std::array<SeedKey, 3> key_l;

  static ValSeeds fresh(Rng& rng);
};

ValKey gen_val_key(const ValSeeds& seeds, int n_pmt1, int n_pmt2);

// One-time position key for a single image.
struct PosKey {
  struct Comp {
    Permutation pmtb;                    // block permutation, length blknum
    std::vector<Permutation> pmtp;       // per block, length = pair count
    std::vector<BitString> bitkey;       // per block DC mask, max(g_DC, enc_len) bits
    std::vector<uint8_t> plain_dc_len;   // original g_DC per block

    bool operator==(const Comp&) const = default;
  };
  std::string iid;
  std::array<Comp, 3> comps;

  bool operator==(const PosKey&) const = default;
};

// Seeds 𝒦_p; one-time-pad per image.
struct PosSeeds {
  std::array<SeedKey, 3> key_blo;
  std::array<SeedKey, 3> key_inblo;
  std::array<SeedKey, 3> key_dc;

  static PosSeeds fresh(Rng& rng);
};

// Ciphertext JPEG plus its identity record.
struct EncryptedImage {
  std::string iid;
  std::string owner_id;
  int n_pmt1 = 5;
  int n_pmt2 = 5;
  std::vector<uint8_t> jpeg;
};

// sqnt cycling: block position i (1-based) -> table index in 1..n.
inline int sqnt(int i, int n) { return (i - 1) % n + 1; }

// Algorithm stages. Each returns the transformed image; generators derive the
// permutations from seeds with (IID, component, block) domain tags.
std::array<Permutation, 3> gen_block_perms(const CoeffImage& img, const PosSeeds& seeds,
                                           const std::string& iid);
CoeffImage block_permute(const CoeffImage& img, const std::array<Permutation, 3>& pmtb);
CoeffImage block_unpermute(const CoeffImage& img, const std::array<Permutation, 3>& pmtb);

std::array<std::vector<Permutation>, 3> gen_intra_perms(const CoeffImage& img,
                                                        const PosSeeds& seeds,
                                                        const std::string& iid);
CoeffImage intra_block_permute(const CoeffImage& img,
                               const std::array<std::vector<Permutation>, 3>& pmtp);
CoeffImage intra_block_unpermute(const CoeffImage& img,
                                 const std::array<std::vector<Permutation>, 3>& pmtp);

struct ValueSubstResult {
  CoeffImage img;
  std::array<std::vector<BitString>, 3> bitkey;
  std::array<std::vector<uint8_t>, 3> plain_dc_len;
};
ValueSubstResult value_substitute(const CoeffImage& img, const ValKey& vk, const PosSeeds& seeds,
                                  const std::string& iid);
CoeffImage value_unsubstitute(const CoeffImage& img, const ValKey& vk, const PosKey& pk);

// Full pipeline on the coefficient model (BlockPermut, IntraBlockPermut,
// ValueSubstitution).
std::pair<CoeffImage, PosKey> encrypt_coeffs(const CoeffImage& img, const std::string& iid,
                                             const ValKey& vk, const PosSeeds& seeds);

struct EncResult {
  EncryptedImage enc;
  PosKey poskey;
};
EncResult img_enc(const CoeffImage& img, const std::string& iid, const std::string& owner_id,
                  const ValKey& vk, Rng& rng);
EncResult img_enc_with_seeds(const CoeffImage& img, const std::string& iid,
                             const std::string& owner_id, const ValKey& vk, const PosSeeds& seeds);

CoeffImage img_dec(const EncryptedImage& enc, const PosKey& pk, const ValKey& vk);
CoeffImage img_dec_coeffs(const CoeffImage& ct, const PosKey& pk, const ValKey& vk);

// Query trapdoor: per authorized owner, the full pipeline under that owner's
// value key plus one extra block permutation; no keys are retained.
std::vector<std::pair<std::string, EncryptedImage>> trap_gen(
    const CoeffImage& query, const std::vector<std::pair<std::string, const ValKey*>>& authorized,
    Rng& rng);
EncryptedImage trap_gen_single(const CoeffImage& query, const std::string& owner_id,
                               const ValKey& vk, const PosSeeds& seeds,
                               const std::array<SeedKey, 3>& extra_blo, const std::string& qid);

// Security-strength accounting: per-term bit counts of the keyspace.
struct SecurityStrength {
  double table_v_bits = 0;      // 3 · N_pmt1 · log2(20!)
  double blknum_bits = 0;       // Σ log2(blknum!)
  double blksize_bits = 0;      // Σ Σ log2(blksize!)
  double table_dcl_bits = 0;    // 3 · N_pmt2 · log2(10!)
  double xor_bits = 0;          // Σ n_i
  double total() const {
    return table_v_bits + blknum_bits + blksize_bits + table_dcl_bits + xor_bits;
  }
};
SecurityStrength security_strength(const PosKey& pk, int n_pmt1, int n_pmt2);

// Chi-square of the pooled in-table encrypted v histogram against uniform.
double v_hist_chi_square(const CoeffImage& img);

// 20-bin in-table v histogram of one component (index = v_index).
std::array<uint64_t, kVAlphabet> v_histogram(const CoeffImage& img, int comp);

// Canonical serializations (shared container format).
std::vector<uint8_t> serialize_val_key(const ValKey& vk);
ValKey deserialize_val_key(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> serialize_pos_key(const PosKey& pk);
PosKey deserialize_pos_key(const std::vector<uint8_t>& bytes);

}  // namespace jes
