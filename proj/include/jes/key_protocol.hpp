#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jes/image_cipher.hpp"
#include "jes/perm.hpp"

namespace jes {

// Upmtp covers every possible pair count, UbitKey every mask length the
// max(g_DC, enc_len) convention can produce.
inline constexpr int kMaxPairs = 63;
inline constexpr int kMaxMaskBits = 16;

struct UserKeySeeds {
  std::array<SeedKey, 3> key_ublo;
  std::array<SeedKey, 3> key_uinblo;
  std::array<SeedKey, 3> key_udc;

  static UserKeySeeds fresh(Rng& rng);
};

// Per-principal key protecting position keys. Upmtp and UbitKey are fixed
// families; Upmtb entries materialize per exact block count (seed-backed keys
// only — combined keys carry just their materialized entries).
class UserKey {
 public:
  UserKey() = default;

  std::optional<UserKeySeeds> seeds;
  std::array<std::map<uint32_t, Permutation>, 3> upmtb;
  std::array<std::vector<Permutation>, 3> upmtp;   // sizes 1..63 at index s-1
  std::array<std::vector<BitString>, 3> ubitkey;   // lengths 1..16 at index L-1

  // Fetches (materializing from seeds when possible) the block-count entry.
  const Permutation& upmtb_for(int comp, uint32_t n);
  bool has_upmtb(int comp, uint32_t n) const;
  // Per-block byte mask for the plain_dc_len field, XOR-linear in the key.
  uint8_t dc_len_mask(int comp, size_t block_index) const;

  bool operator==(const UserKey& o) const {
    return upmtb == o.upmtb && upmtp == o.upmtp && ubitkey == o.ubitkey;
  }
};

UserKey gen_user_key(const UserKeySeeds& seeds);

// PosKey encrypted under a UserKey; same shape, plus the recovery MAC.
struct EncPosKey {
  struct Comp {
    Permutation pmtb;
    std::vector<Permutation> pmtp;
    std::vector<BitString> bitkey;
    std::vector<uint8_t> masked_dc_len;

    bool operator==(const Comp&) const = default;
  };
  std::string iid;
  std::array<Comp, 3> comps;
  std::array<uint8_t, 32> mac{};  // over the plaintext PosKey, scope-keyed

  bool operator==(const EncPosKey&) const = default;
};

// MAC key shared through authorization: derived from the scope's ImgValKey
// and the image id.
std::array<uint8_t, 32> pos_key_mac_key(const ValKey& scope_val_key, const std::string& iid);
std::array<uint8_t, 32> pos_key_mac(const PosKey& pk, const std::array<uint8_t, 32>& mac_key);

// Algorithm 7 (owner side): DecPerm entrywise on permutations, XOR on masks.
EncPosKey img_key_enc(const PosKey& pk, UserKey& ukey,
                      const std::array<uint8_t, 32>& mac_key);

// Algorithm 8: entrywise EncPerm (enc) / DecPerm (dec) on matching sizes,
// XOR on bitstreams (self-inverse).
UserKey user_key_enc(const UserKey& a, UserKey& b);
UserKey user_key_dec(const UserKey& a, UserKey& b);

// KMC transform: EncPerm flavor with a link/increment key, so Eq.(1)
// collapses the owner chain; the MAC travels untouched.
EncPosKey kmc_transform(const EncPosKey& enc, UserKey& link);

// Final user-side recovery; verifies the MAC and throws tamper on mismatch.
PosKey user_recover_pos_key(const EncPosKey& enc2, UserKey& ukey_uid,
                            const std::array<uint8_t, 32>& mac_key);

// Group increment keys.
UserKey derive_inc_usr_key(const UserKey& u_oid, UserKey& u_gid);

struct IncValKey {
  int n_pmt1 = 5;
  int n_pmt2 = 5;
  // dec_perm(pmtv^OID, pmtv^GID) per component/table, as value tables.
  std::array<std::vector<std::array<int8_t, kVAlphabet>>, 3> dv;
  std::array<std::vector<std::array<uint8_t, 10>>, 3> dl;
};
IncValKey derive_inc_val_key(const ValKey& v_oid, const ValKey& v_gid);

// CS-side re-encryption of the value layer: owner ciphertext -> group
// ciphertext (positions untouched). DC codes are length-adjusted by suffix
// truncation / MSB zero-extension.
CoeffImage cs_reencrypt_for_group(const CoeffImage& owner_ct, const IncValKey& inc);
EncryptedImage cs_reencrypt_for_group(const EncryptedImage& owner_ct, const IncValKey& inc,
                                      const std::string& gid);

// Group-scope bitkeys matching cs_reencrypt's DC adjustment, recomputed by
// the member from his retained PosKey and seeds plus both value keys.
std::array<std::vector<BitString>, 3> group_bitkeys(const PosKey& pk, const ValKey& v_oid,
                                                    const ValKey& v_gid, const PosSeeds& seeds);

// AES-256-GCM wrap of a serialized EncPosKey (KMC -> CS -> user path).
std::vector<uint8_t> wrap_for_group(const EncPosKey& enc2, const std::array<uint8_t, 32>& key,
                                    const std::array<uint8_t, 12>& nonce);
EncPosKey unwrap_for_group(const std::vector<uint8_t>& envelope,
                           const std::array<uint8_t, 32>& key);

std::vector<uint8_t> serialize_enc_pos_key(const EncPosKey& e);
EncPosKey deserialize_enc_pos_key(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> serialize_user_key(const UserKey& u);
UserKey deserialize_user_key(const std::vector<uint8_t>& bytes);

}  // namespace jes
