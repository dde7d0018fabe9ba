#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "jes/config.hpp"
#include "jes/image_cipher.hpp"
#include "jes/index.hpp"
#include "jes/key_protocol.hpp"

namespace jes {

enum class MsgKind {
  outsource,
  auth_grant,
  query,
  key_request,
  key_response,
  result,
  group_create,
  group_join,
  group_leave,
  image_add,
  image_delete,
};

std::string_view to_string(MsgKind k);

// Logged envelope; payloads are logged as digests only.
struct Message {
  uint64_t seq = 0;
  std::string sender;
  std::string receiver;
  MsgKind kind = MsgKind::outsource;
  std::string digest;  // sha256 prefix of the payload
  uint64_t payload_size = 0;
};

// Per-query interaction rounds (one round = request + response).
struct RoundCounter {
  int cs_kmc = 0;
  int cs_user = 0;
  int kmc_user = 0;
};

// Deterministic seed derivation for auxiliary harness randomness.
SeedKey derive_seed_key(uint64_t seed, const std::string& label);

// Stateless deterministic source of fresh key material; only the draw counter
// is state, so entity persistence stays trivial.
struct KeySource {
  SeedKey base;
  uint64_t counter = 0;

  SeedKey fresh(std::string role);
  std::array<uint8_t, 32> fresh32(std::string_view label);
  std::array<uint8_t, 12> fresh12(std::string_view label);
  Rng fresh_rng(std::string_view label);
};

// ---------------------------------------------------------------------------
// Entity states. Invariants the simulator checks after every flow: the KMC
// state never contains ValKey bytes, the CS never unwrapped UserKey bytes,
// and users never exchange messages with the KMC.

struct OwnerState {
  std::string oid;
  KeySource keys;
  ValSeeds val_seeds;
  ValKey val_key;
  UserKey user_key;  // UserKey_OID, seed-backed

  struct ImageRecord {
    std::string iid;
    PosKey poskey;
    PosSeeds pos_seeds;
    uint64_t plain_size = 0;
    std::array<uint32_t, 3> blknum{};
  };
  std::map<std::string, ImageRecord> registry;
  std::map<std::string, UserKey> granted;  // uid -> UserKey_UID (owner-generated)
  std::set<std::string> groups;
  uint64_t next_iid = 1;
};

struct GroupScopeKeyRecord {
  std::array<std::vector<BitString>, 3> bitkey;  // encrypted under UserKey_OID
  std::array<uint8_t, 32> mac{};                 // keyed by the group ValKey
};

struct KmcState {
  struct PosRecord {
    std::string oid;
    EncPosKey owner_scope;
    std::map<std::string, GroupScopeKeyRecord> group_scopes;  // by gid
  };
  std::map<std::string, PosRecord> pos_store;                    // by iid
  std::map<std::string, std::map<std::string, UserKey>> links;   // oid -> uid -> link key
  std::map<std::string, std::map<std::string, UserKey>> group_links;  // gid -> uid
  std::map<std::string, std::map<std::string, UserKey>> inc_usr;      // gid -> oid
  std::map<std::string, std::map<std::string, std::array<uint8_t, 32>>> wrap_keys;  // gid -> uid
  std::map<std::string, std::set<std::string>> auth;  // source id -> uids (double check)
  KeySource keys;                                     // wrap nonces
};

struct CsState {
  std::map<std::string, EncryptedImage> images;  // owner ciphertexts by iid
  std::map<std::string, std::map<std::string, EncryptedImage>> group_images;  // gid -> iid
  LinearIndex index;
  std::map<std::string, std::array<Vocabulary, 3>> vocabs;        // by scope tag
  std::map<std::string, std::map<std::string, IncValKey>> inc_val;  // gid -> oid
  std::map<std::string, std::set<std::string>> auth;              // source id -> uids
  std::map<std::string, std::set<std::string>> group_members;     // gid -> oids
  std::map<std::string, std::string> owner_of;                    // iid -> oid
};

struct UserState {
  std::string uid;
  KeySource keys;
  std::map<std::string, ValKey> owner_val_keys;
  std::map<std::string, UserKey> owner_user_keys;  // UserKey_UID per owner
  std::map<std::string, ValKey> group_val_keys;
  std::map<std::string, UserKey> group_user_keys;  // UserKey_UID per group
  std::map<std::string, std::array<uint8_t, 32>> group_wrap_keys;
};

struct GroupState {
  std::string gid;
  KeySource keys;
  ValSeeds val_seeds;
  ValKey val_key;   // ImgValKey_GID
  UserKey user_key;  // UserKey_GID, seed-backed
  std::set<std::string> members;
  std::map<std::string, UserKey> granted;  // uid -> UserKey_UID_GID
  std::map<std::string, std::array<uint8_t, 32>> wrap_keys;
  std::set<std::array<uint32_t, 3>> member_sizes;  // block-count triples seen
};

struct SecurityReport {
  struct PerImage {
    std::string iid;
    std::string oid;
    SecurityStrength strength;
    double chi_npmt1 = 0;  // single-table encrypted v histogram vs uniform
    double chi_npmt5 = 0;  // five-table
  };
  std::vector<PerImage> images;
  double paper_feature_bits = 642.0;  // figure printed in the source analysis
  double recomputed_feature_bits = 0;
  uint64_t plaintext_bytes = 0;
  uint64_t ciphertext_bytes = 0;
  double size_ratio() const {
    return plaintext_bytes ? double(ciphertext_bytes) / double(plaintext_bytes) : 0.0;
  }
  std::string to_json() const;
};

// ---------------------------------------------------------------------------

struct QueryItem {
  std::string iid;
  std::string source;  // oid or gid
  double distance = 0;
  CoeffImage decrypted;    // user-side decryption output
  std::vector<uint8_t> plaintext_jpeg;
};

struct QueryOutcome {
  SearchResult result;
  std::vector<QueryItem> items;
  RoundCounter rounds;
};

// Five-entity deterministic simulation with an in-process FIFO message bus.
class Simulator {
 public:
  Simulator(SystemConfig config, std::filesystem::path workspace);

  static void init_workspace(const std::filesystem::path& dir, const SystemConfig& config);
  static Simulator load(const std::filesystem::path& dir);
  void save();

  const SystemConfig& config() const { return config_; }

  void add_owner(const std::string& oid);
  void add_user(const std::string& uid);
  bool has_owner(const std::string& oid) const { return owners_.count(oid) != 0; }
  bool has_user(const std::string& uid) const { return users_.count(uid) != 0; }

  std::vector<std::string> flow_outsource(const std::string& oid,
                                          const std::vector<std::vector<uint8_t>>& jpegs);
  void flow_authorize(const std::string& oid, const std::string& uid);
  void flow_group_create(const std::string& gid);
  void flow_group_join(const std::string& gid, const std::string& oid);
  void flow_group_leave(const std::string& gid, const std::string& oid);
  void flow_group_authorize(const std::string& gid, const std::string& uid);
  std::string flow_image_add(const std::string& oid, const std::vector<uint8_t>& jpeg);
  void flow_image_delete(const std::string& oid, const std::string& iid);

  QueryOutcome flow_query(const std::string& uid, const std::vector<uint8_t>& query_jpeg,
                          const std::vector<std::string>& sources, size_t m);

  SecurityReport security_report();

  // State inspection used by the boundary assertions and the tests.
  const KmcState& kmc() const { return kmc_; }
  const CsState& cs() const { return cs_; }
  const OwnerState& owner(const std::string& oid) const;
  const UserState& user(const std::string& uid) const;
  const GroupState& group(const std::string& gid) const;
  const std::vector<Message>& log() const { return log_; }
  const RoundCounter& last_rounds() const { return last_rounds_; }

  // Throws on any knowledge-boundary violation; also run after every flow.
  void verify_knowledge_boundaries() const;

 private:
  void send(const std::string& sender, const std::string& receiver, MsgKind kind,
            const std::vector<uint8_t>& payload);
  OwnerState& owner_mut(const std::string& oid);
  UserState& user_mut(const std::string& uid);
  GroupState& group_mut(const std::string& gid);

  std::string ingest_one(OwnerState& owner, const std::vector<uint8_t>& jpeg);
  void rebuild_owner_scopes(const std::string& oid);
  void rebuild_group_scopes(const std::string& gid);
  void index_image_all_scopes(const std::string& iid);
  void push_group_artifacts(OwnerState& owner, const std::string& gid, const std::string& iid);
  void extend_links_for_size(OwnerState& owner, const std::array<uint32_t, 3>& blknum);
  void extend_group_links_for_size(GroupState& grp, const std::array<uint32_t, 3>& blknum);

  SystemConfig config_;
  std::filesystem::path dir_;
  std::map<std::string, OwnerState> owners_;
  std::map<std::string, UserState> users_;
  std::map<std::string, GroupState> groups_;
  KmcState kmc_;
  CsState cs_;
  std::vector<Message> log_;
  size_t flushed_log_ = 0;
  RoundCounter last_rounds_;
};

}  // namespace jes
