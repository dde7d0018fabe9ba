#include "jes/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <json.hpp>

#include "jes/crypto_backend.hpp"
#include "jes/error.hpp"
#include "jes/jpeg_codec.hpp"
#include "jes/serial.hpp"

namespace jes {

namespace fs = std::filesystem;

std::string_view to_string(MsgKind k) {
  switch (k) {
    case MsgKind::outsource: return "Outsource";
    case MsgKind::auth_grant: return "AuthGrant";
    case MsgKind::query: return "Query";
    case MsgKind::key_request: return "KeyRequest";
    case MsgKind::key_response: return "KeyResponse";
    case MsgKind::result: return "Result";
    case MsgKind::group_create: return "GroupCreate";
    case MsgKind::group_join: return "GroupJoin";
    case MsgKind::group_leave: return "GroupLeave";
    case MsgKind::image_add: return "ImageAdd";
    case MsgKind::image_delete: return "ImageDelete";
  }
  return "?";
}

SeedKey KeySource::fresh(std::string role) {
  XofStream xs(base, tag("draw", counter++), "keysource");
  SeedKey k;
  xs.fill(k.secret.data(), k.secret.size());
  k.role = std::move(role);
  return k;
}

std::array<uint8_t, 32> KeySource::fresh32(std::string_view label) {
  return fresh(std::string(label)).secret;
}

std::array<uint8_t, 12> KeySource::fresh12(std::string_view label) {
  auto s = fresh(std::string(label)).secret;
  std::array<uint8_t, 12> n;
  std::copy_n(s.begin(), 12, n.begin());
  return n;
}

Rng KeySource::fresh_rng(std::string_view label) {
  return Rng(fresh(std::string(label)), tag("rng"));
}

namespace {

SeedKey master_seed(uint64_t seed) {
  std::vector<uint8_t> bytes(8);
  for (int i = 0; i < 8; ++i) bytes[size_t(i)] = uint8_t(seed >> (8 * i));
  SeedKey k;
  k.secret = sha256(bytes);
  k.role = "master";
  return k;
}

KeySource entity_key_source(uint64_t seed, const std::string& entity) {
  XofStream xs(master_seed(seed), tag("entity", entity), "base");
  KeySource src;
  src.base.role = "entity:" + entity;
  xs.fill(src.base.secret.data(), src.base.secret.size());
  return src;
}

}  // namespace

SeedKey derive_seed_key(uint64_t seed, const std::string& label) {
  XofStream xs(master_seed(seed), tag("derive", label), "seedkey");
  SeedKey k;
  k.role = label;
  xs.fill(k.secret.data(), k.secret.size());
  return k;
}

namespace {

uint64_t scope_kmeans_seed(uint64_t seed, const std::string& tag_str, int comp) {
  uint64_t h = 1469598103934665603ull ^ seed;
  for (char c : tag_str) h = (h ^ uint8_t(c)) * 1099511628211ull;
  return (h ^ uint64_t(comp)) * 1099511628211ull;
}

std::array<uint32_t, 3> blknum_of(const CoeffImage& img) {
  return {uint32_t(img.comps[0].blocks.size()), uint32_t(img.comps[1].blocks.size()),
          uint32_t(img.comps[2].blocks.size())};
}

// Owner-side XOR of group bitkeys under UserKey_OID (the bitkey branch of
// Algorithm 7).
std::array<std::vector<BitString>, 3> xor_bitkeys_under(
    const std::array<std::vector<BitString>, 3>& bitkeys, const UserKey& ukey) {
  std::array<std::vector<BitString>, 3> out;
  for (int c = 0; c < 3; ++c) {
    out[c].reserve(bitkeys[c].size());
    for (const BitString& b : bitkeys[c]) {
      if (b.empty())
        out[c].emplace_back();
      else
        out[c].push_back(b ^ ukey.ubitkey[c][b.size() - 1]);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction / registration.

Simulator::Simulator(SystemConfig config, fs::path workspace)
    : config_(std::move(config)), dir_(std::move(workspace)) {
  kmc_.keys = entity_key_source(config_.seed, "kmc");
}

void Simulator::add_owner(const std::string& oid) {
  require(!oid.empty(), ErrorKind::contract, "empty owner id");
  require(owners_.count(oid) == 0, ErrorKind::duplicate, "owner exists: " + oid);
  require(groups_.count(oid) == 0 && users_.count(oid) == 0, ErrorKind::duplicate,
          "id already taken: " + oid);
  OwnerState o;
  o.oid = oid;
  o.keys = entity_key_source(config_.seed, "owner:" + oid);
  Rng vrng = o.keys.fresh_rng("valseeds");
  o.val_seeds = ValSeeds::fresh(vrng);
  o.val_key = gen_val_key(o.val_seeds, config_.n_pmt1, config_.n_pmt2);
  Rng urng = o.keys.fresh_rng("userkey");
  o.user_key = gen_user_key(UserKeySeeds::fresh(urng));
  owners_.emplace(oid, std::move(o));
}

void Simulator::add_user(const std::string& uid) {
  require(!uid.empty(), ErrorKind::contract, "empty user id");
  require(users_.count(uid) == 0, ErrorKind::duplicate, "user exists: " + uid);
  require(owners_.count(uid) == 0 && groups_.count(uid) == 0, ErrorKind::duplicate,
          "id already taken: " + uid);
  UserState u;
  u.uid = uid;
  u.keys = entity_key_source(config_.seed, "user:" + uid);
  users_.emplace(uid, std::move(u));
}

OwnerState& Simulator::owner_mut(const std::string& oid) {
  auto it = owners_.find(oid);
  require(it != owners_.end(), ErrorKind::not_found, "unknown owner: " + oid);
  return it->second;
}
UserState& Simulator::user_mut(const std::string& uid) {
  auto it = users_.find(uid);
  require(it != users_.end(), ErrorKind::not_found, "unknown user: " + uid);
  return it->second;
}
GroupState& Simulator::group_mut(const std::string& gid) {
  auto it = groups_.find(gid);
  require(it != groups_.end(), ErrorKind::not_found, "unknown group: " + gid);
  return it->second;
}
const OwnerState& Simulator::owner(const std::string& oid) const {
  return const_cast<Simulator*>(this)->owner_mut(oid);
}
const UserState& Simulator::user(const std::string& uid) const {
  return const_cast<Simulator*>(this)->user_mut(uid);
}
const GroupState& Simulator::group(const std::string& gid) const {
  return const_cast<Simulator*>(this)->group_mut(gid);
}

void Simulator::send(const std::string& sender, const std::string& receiver, MsgKind kind,
                     const std::vector<uint8_t>& payload) {
  Message m;
  m.seq = log_.size() + 1;
  m.sender = sender;
  m.receiver = receiver;
  m.kind = kind;
  m.digest = hex(sha256(payload)).substr(0, 16);
  m.payload_size = payload.size();
  log_.push_back(std::move(m));
}

// ---------------------------------------------------------------------------
// Feature plumbing (CS side).

void Simulator::rebuild_owner_scopes(const std::string& oid) {
  // Gather this owner's ciphertext histograms.
  std::vector<std::string> iids;
  for (const auto& [iid, o] : cs_.owner_of)
    if (o == oid) iids.push_back(iid);

  std::string own_tag = Scope::owner(oid).tag();
  std::string glob_tag = Scope::owner_global(oid).tag();
  if (iids.empty()) {
    cs_.vocabs.erase(own_tag);
    cs_.vocabs.erase(glob_tag);
    return;
  }

  std::array<std::vector<std::vector<LocalAcHist>>, 3> per_image;
  std::vector<CoeffImage> decoded;
  decoded.reserve(iids.size());
  for (const auto& iid : iids) {
    decoded.push_back(decode_jpeg(cs_.images.at(iid).jpeg));
    auto hists = extract_local_hists(decoded.back());
    for (int c = 0; c < 3; ++c) per_image[c].push_back(std::move(hists[c]));
  }

  auto build = [&](const std::string& tag_str, const std::array<int, 3>& kcfg) {
    std::array<Vocabulary, 3> v;
    for (int c = 0; c < 3; ++c) {
      size_t points = 0;
      for (const auto& img : per_image[c]) points += img.size();
      int k = std::max(1, std::min(kcfg[size_t(c)], int(points)));
      v[c] = build_vocabulary(per_image[c], k, scope_kmeans_seed(config_.seed, tag_str, c),
                              tag_str);
    }
    cs_.vocabs[tag_str] = std::move(v);
  };
  build(own_tag, config_.k_owner);
  build(glob_tag, config_.k_global);

  for (size_t i = 0; i < iids.size(); ++i) {
    IndexRow& row = cs_.index.row(iids[i]);
    row.features[own_tag] = make_bow_feature(decoded[i], cs_.vocabs.at(own_tag));
    row.features[glob_tag] = make_bow_feature(decoded[i], cs_.vocabs.at(glob_tag));
  }
}

void Simulator::rebuild_group_scopes(const std::string& gid) {
  std::string grp_tag = Scope::group(gid).tag();
  std::string glob_tag = Scope::group_global(gid).tag();
  // Departed members leave no stale columns behind.
  for (auto& [iid, row] : cs_.index.rows_mut()) {
    row.features.erase(grp_tag);
    row.features.erase(glob_tag);
  }
  auto git = cs_.group_images.find(gid);
  if (git == cs_.group_images.end() || git->second.empty()) {
    cs_.vocabs.erase(grp_tag);
    cs_.vocabs.erase(glob_tag);
    return;
  }

  std::array<std::vector<std::vector<LocalAcHist>>, 3> per_image;
  std::vector<std::pair<std::string, CoeffImage>> decoded;
  for (const auto& [iid, enc] : git->second) {
    decoded.emplace_back(iid, decode_jpeg(enc.jpeg));
    auto hists = extract_local_hists(decoded.back().second);
    for (int c = 0; c < 3; ++c) per_image[c].push_back(std::move(hists[c]));
  }

  auto build = [&](const std::string& tag_str, const std::array<int, 3>& kcfg) {
    std::array<Vocabulary, 3> v;
    for (int c = 0; c < 3; ++c) {
      size_t points = 0;
      for (const auto& img : per_image[c]) points += img.size();
      int k = std::max(1, std::min(kcfg[size_t(c)], int(points)));
      v[c] = build_vocabulary(per_image[c], k, scope_kmeans_seed(config_.seed, tag_str, c),
                              tag_str);
    }
    cs_.vocabs[tag_str] = std::move(v);
  };
  build(grp_tag, config_.k_owner);
  build(glob_tag, config_.k_global);

  for (auto& [iid, img] : decoded) {
    IndexRow& row = cs_.index.row(iid);
    row.features[grp_tag] = make_bow_feature(img, cs_.vocabs.at(grp_tag));
    row.features[glob_tag] = make_bow_feature(img, cs_.vocabs.at(glob_tag));
  }
}

void Simulator::index_image_all_scopes(const std::string& iid) {
  // Feature extraction by existing visual words (the update path).
  const std::string oid = cs_.owner_of.at(iid);
  CoeffImage ct = decode_jpeg(cs_.images.at(iid).jpeg);
  IndexRow& row = cs_.index.row(iid);
  for (const auto& scope : {Scope::owner(oid), Scope::owner_global(oid)}) {
    auto vit = cs_.vocabs.find(scope.tag());
    require(vit != cs_.vocabs.end(), ErrorKind::contract,
            "no visual words for scope " + scope.tag());
    row.features[scope.tag()] = make_bow_feature(ct, vit->second);
  }
  for (const auto& [gid, members] : cs_.group_members) {
    if (!members.count(oid)) continue;
    const EncryptedImage& genc = cs_.group_images.at(gid).at(iid);
    CoeffImage gct = decode_jpeg(genc.jpeg);
    for (const auto& scope : {Scope::group(gid), Scope::group_global(gid)}) {
      auto vit = cs_.vocabs.find(scope.tag());
      require(vit != cs_.vocabs.end(), ErrorKind::contract,
              "no visual words for scope " + scope.tag());
      row.features[scope.tag()] = make_bow_feature(gct, vit->second);
    }
  }
}

// ---------------------------------------------------------------------------
// Outsourcing and authorization.

std::string Simulator::ingest_one(OwnerState& owner, const std::vector<uint8_t>& jpeg) {
  CoeffImage img = decode_jpeg(jpeg);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(owner.next_iid++));
  std::string iid = owner.oid + "-" + buf;

  Rng prng = owner.keys.fresh_rng("posseeds:" + iid);
  PosSeeds seeds = PosSeeds::fresh(prng);
  EncResult enc = img_enc_with_seeds(img, iid, owner.oid, owner.val_key, seeds);

  OwnerState::ImageRecord rec;
  rec.iid = iid;
  rec.poskey = enc.poskey;
  rec.pos_seeds = seeds;
  rec.plain_size = jpeg.size();
  rec.blknum = blknum_of(img);
  owner.registry.emplace(iid, std::move(rec));

  // ImgPosKey' to KMC.
  auto mac_key = pos_key_mac_key(owner.val_key, iid);
  EncPosKey enc_pos = img_key_enc(enc.poskey, owner.user_key, mac_key);
  auto enc_pos_bytes = serialize_enc_pos_key(enc_pos);
  send("owner:" + owner.oid, "kmc", MsgKind::outsource, enc_pos_bytes);
  kmc_.pos_store[iid].oid = owner.oid;
  kmc_.pos_store[iid].owner_scope = std::move(enc_pos);

  // Ciphertext to CS.
  send("owner:" + owner.oid, "cs", MsgKind::outsource, enc.enc.jpeg);
  cs_.owner_of[iid] = owner.oid;
  IndexRow row;
  row.iid = iid;
  row.owner_id = owner.oid;
  cs_.index.add(std::move(row));
  cs_.images.emplace(iid, std::move(enc.enc));

  // Cover the new block counts in every standing link key.
  extend_links_for_size(owner, owner.registry.at(iid).blknum);

  // Group artifacts for every group this owner belongs to.
  for (const auto& gid : owner.groups) push_group_artifacts(owner, gid, iid);
  return iid;
}

void Simulator::extend_links_for_size(OwnerState& owner, const std::array<uint32_t, 3>& blknum) {
  for (int c = 0; c < 3; ++c) owner.user_key.upmtb_for(c, blknum[size_t(c)]);
  for (auto& [uid, ukey_uid] : owner.granted) {
    UserKey& link = kmc_.links.at(owner.oid).at(uid);
    for (int c = 0; c < 3; ++c) {
      uint32_t n = blknum[size_t(c)];
      if (!link.upmtb[c].count(n))
        link.upmtb[c].emplace(n, enc_perm(owner.user_key.upmtb_for(c, n),
                                          ukey_uid.upmtb_for(c, n)));
    }
  }
  for (const auto& gid : owner.groups) {
    GroupState& grp = group_mut(gid);
    if (!grp.member_sizes.count(blknum)) {
      grp.member_sizes.insert(blknum);
      extend_group_links_for_size(grp, blknum);
    }
    UserKey& inc = kmc_.inc_usr.at(gid).at(owner.oid);
    UserKey grp_ukey = gen_user_key(*grp.user_key.seeds);
    for (int c = 0; c < 3; ++c) {
      uint32_t n = blknum[size_t(c)];
      if (!inc.upmtb[c].count(n))
        inc.upmtb[c].emplace(
            n, dec_perm(owner.user_key.upmtb_for(c, n), grp_ukey.upmtb_for(c, n)));
    }
  }
}

void Simulator::extend_group_links_for_size(GroupState& grp,
                                            const std::array<uint32_t, 3>& blknum) {
  for (auto& [uid, ukey_uid] : grp.granted) {
    UserKey& link = kmc_.group_links.at(grp.gid).at(uid);
    for (int c = 0; c < 3; ++c) {
      uint32_t n = blknum[size_t(c)];
      if (!link.upmtb[c].count(n))
        link.upmtb[c].emplace(n,
                              enc_perm(grp.user_key.upmtb_for(c, n), ukey_uid.upmtb_for(c, n)));
    }
  }
}

std::vector<std::string> Simulator::flow_outsource(const std::string& oid,
                                                   const std::vector<std::vector<uint8_t>>& jpegs) {
  OwnerState& owner = owner_mut(oid);
  std::vector<std::string> iids;
  iids.reserve(jpegs.size());
  for (const auto& j : jpegs) iids.push_back(ingest_one(owner, j));
  rebuild_owner_scopes(oid);
  for (const auto& gid : owner.groups) rebuild_group_scopes(gid);
  verify_knowledge_boundaries();
  return iids;
}

void Simulator::flow_authorize(const std::string& oid, const std::string& uid) {
  OwnerState& owner = owner_mut(oid);
  UserState& usr = user_mut(uid);
  require(!owner.granted.count(uid), ErrorKind::duplicate, "already authorized");

  // ImgValKey and a fresh UserKey_UID go to the user.
  Rng urng = owner.keys.fresh_rng("grant:" + uid);
  UserKey ukey_uid = gen_user_key(UserKeySeeds::fresh(urng));
  send("owner:" + oid, "user:" + uid, MsgKind::auth_grant, serialize_val_key(owner.val_key));
  usr.owner_val_keys[oid] = owner.val_key;
  usr.owner_user_keys[oid] = ukey_uid;

  // Link key UserKey_(OID,UID) to the KMC, covering current image sizes.
  for (const auto& [iid, rec] : owner.registry)
    for (int c = 0; c < 3; ++c) owner.user_key.upmtb_for(c, rec.blknum[size_t(c)]);
  UserKey link = user_key_enc(owner.user_key, ukey_uid);
  send("owner:" + oid, "kmc", MsgKind::auth_grant, serialize_user_key(link));
  kmc_.links[oid][uid] = std::move(link);
  kmc_.auth[oid].insert(uid);
  owner.granted.emplace(uid, std::move(ukey_uid));

  // Grant registered at CS.
  send("owner:" + oid, "cs", MsgKind::auth_grant, {});
  cs_.auth[oid].insert(uid);
  verify_knowledge_boundaries();
}

// ---------------------------------------------------------------------------
// Groups.

void Simulator::flow_group_create(const std::string& gid) {
  require(!gid.empty(), ErrorKind::contract, "empty group id");
  require(groups_.count(gid) == 0, ErrorKind::duplicate, "group exists: " + gid);
  require(owners_.count(gid) == 0 && users_.count(gid) == 0, ErrorKind::duplicate,
          "id already taken: " + gid);
  GroupState g;
  g.gid = gid;
  g.keys = entity_key_source(config_.seed, "group:" + gid);
  Rng vrng = g.keys.fresh_rng("valseeds");
  g.val_seeds = ValSeeds::fresh(vrng);
  g.val_key = gen_val_key(g.val_seeds, config_.n_pmt1, config_.n_pmt2);
  Rng urng = g.keys.fresh_rng("userkey");
  g.user_key = gen_user_key(UserKeySeeds::fresh(urng));
  groups_.emplace(gid, std::move(g));
  send("group:" + gid, "cs", MsgKind::group_create, {});
  cs_.group_members[gid];
  verify_knowledge_boundaries();
}

void Simulator::push_group_artifacts(OwnerState& owner, const std::string& gid,
                                     const std::string& iid) {
  GroupState& grp = group_mut(gid);
  const auto& rec = owner.registry.at(iid);

  // Member recomputes group-scope bitkeys against the CS re-encryption
  // convention and ships them under UserKey_OID together with the group MAC.
  auto raw = group_bitkeys(rec.poskey, owner.val_key, grp.val_key, rec.pos_seeds);
  PosKey pk_g = rec.poskey;
  for (int c = 0; c < 3; ++c) pk_g.comps[c].bitkey = raw[c];
  GroupScopeKeyRecord grec;
  grec.bitkey = xor_bitkeys_under(raw, owner.user_key);
  grec.mac = pos_key_mac(pk_g, pos_key_mac_key(grp.val_key, iid));
  {
    Writer w;
    for (int c = 0; c < 3; ++c)
      for (const auto& b : grec.bitkey[c]) w.bits(b);
    send("owner:" + owner.oid, "kmc", MsgKind::group_join, w.take());
  }
  kmc_.pos_store.at(iid).group_scopes[gid] = std::move(grec);

  // CS re-encrypts the value layer for the group scope.
  const IncValKey& inc = cs_.inc_val.at(gid).at(owner.oid);
  cs_.group_images[gid][iid] = cs_reencrypt_for_group(cs_.images.at(iid), inc, gid);
}

void Simulator::flow_group_join(const std::string& gid, const std::string& oid) {
  GroupState& grp = group_mut(gid);
  OwnerState& owner = owner_mut(oid);
  require(!grp.members.count(oid), ErrorKind::duplicate, "already a member");

  // Organizer hands the member the group keys.
  send("group:" + gid, "owner:" + oid, MsgKind::group_join, serialize_val_key(grp.val_key));
  owner.groups.insert(gid);
  grp.members.insert(oid);
  cs_.group_members[gid].insert(oid);

  // IncValKey to CS.
  IncValKey inc_val = derive_inc_val_key(owner.val_key, grp.val_key);
  send("owner:" + oid, "cs", MsgKind::group_join, {});
  cs_.inc_val[gid][oid] = std::move(inc_val);

  // IncUsrKey to KMC, covering the member's image sizes.
  UserKey grp_ukey = gen_user_key(*grp.user_key.seeds);
  for (const auto& [iid, rec] : owner.registry)
    for (int c = 0; c < 3; ++c) {
      owner.user_key.upmtb_for(c, rec.blknum[size_t(c)]);
      grp_ukey.upmtb_for(c, rec.blknum[size_t(c)]);
    }
  UserKey inc_usr = user_key_dec(owner.user_key, grp_ukey);
  send("owner:" + oid, "kmc", MsgKind::group_join, serialize_user_key(inc_usr));
  kmc_.inc_usr[gid][oid] = std::move(inc_usr);

  // Existing group-user links must cover the member's sizes.
  for (const auto& [iid, rec] : owner.registry) {
    if (!grp.member_sizes.count(rec.blknum)) {
      grp.member_sizes.insert(rec.blknum);
      extend_group_links_for_size(grp, rec.blknum);
    }
  }

  // Per-image group key records + CS re-encryption.
  for (const auto& [iid, rec] : owner.registry) push_group_artifacts(owner, gid, iid);
  rebuild_group_scopes(gid);
  verify_knowledge_boundaries();
}

void Simulator::flow_group_leave(const std::string& gid, const std::string& oid) {
  GroupState& grp = group_mut(gid);
  OwnerState& owner = owner_mut(oid);
  require(grp.members.count(oid), ErrorKind::not_found, "not a member");
  send("group:" + gid, "cs", MsgKind::group_leave, {});
  send("group:" + gid, "kmc", MsgKind::group_leave, {});

  grp.members.erase(oid);
  owner.groups.erase(gid);
  cs_.group_members[gid].erase(oid);
  cs_.inc_val[gid].erase(oid);
  kmc_.inc_usr[gid].erase(oid);
  for (const auto& [iid, rec] : owner.registry) {
    cs_.group_images[gid].erase(iid);
    kmc_.pos_store.at(iid).group_scopes.erase(gid);
  }
  rebuild_group_scopes(gid);
  verify_knowledge_boundaries();
}

void Simulator::flow_group_authorize(const std::string& gid, const std::string& uid) {
  GroupState& grp = group_mut(gid);
  UserState& usr = user_mut(uid);
  require(!grp.granted.count(uid), ErrorKind::duplicate, "already authorized");

  Rng urng = grp.keys.fresh_rng("grant:" + uid);
  UserKey ukey_uid = gen_user_key(UserKeySeeds::fresh(urng));
  auto wrap_key = grp.keys.fresh32("wrap:" + uid);

  send("group:" + gid, "user:" + uid, MsgKind::auth_grant, serialize_val_key(grp.val_key));
  usr.group_val_keys[gid] = grp.val_key;
  usr.group_user_keys[gid] = ukey_uid;
  usr.group_wrap_keys[gid] = wrap_key;

  for (const auto& size : grp.member_sizes)
    for (int c = 0; c < 3; ++c) grp.user_key.upmtb_for(c, size[size_t(c)]);
  UserKey link = user_key_enc(grp.user_key, ukey_uid);
  send("group:" + gid, "kmc", MsgKind::auth_grant, serialize_user_key(link));
  kmc_.group_links[gid][uid] = std::move(link);
  kmc_.wrap_keys[gid][uid] = wrap_key;
  kmc_.auth[gid].insert(uid);
  grp.granted.emplace(uid, std::move(ukey_uid));
  grp.wrap_keys[uid] = wrap_key;

  send("group:" + gid, "cs", MsgKind::auth_grant, {});
  cs_.auth[gid].insert(uid);
  verify_knowledge_boundaries();
}

// ---------------------------------------------------------------------------
// Updates.

std::string Simulator::flow_image_add(const std::string& oid, const std::vector<uint8_t>& jpeg) {
  OwnerState& owner = owner_mut(oid);
  bool first_for_owner = owner.registry.empty();
  std::string iid = ingest_one(owner, jpeg);
  send("owner:" + oid, "cs", MsgKind::image_add, {});
  if (first_for_owner) {
    // No visual words exist yet; build them from this first image.
    rebuild_owner_scopes(oid);
    for (const auto& gid : owner.groups) rebuild_group_scopes(gid);
  } else {
    index_image_all_scopes(iid);
  }
  verify_knowledge_boundaries();
  return iid;
}

void Simulator::flow_image_delete(const std::string& oid, const std::string& iid) {
  OwnerState& owner = owner_mut(oid);
  require(owner.registry.count(iid), ErrorKind::not_found, "unknown iid: " + iid);
  send("owner:" + oid, "cs", MsgKind::image_delete, {});
  send("owner:" + oid, "kmc", MsgKind::image_delete, {});
  owner.registry.erase(iid);
  cs_.images.erase(iid);
  cs_.owner_of.erase(iid);
  cs_.index.remove(iid);
  for (auto& [gid, imgs] : cs_.group_images) imgs.erase(iid);
  kmc_.pos_store.erase(iid);
  verify_knowledge_boundaries();
}

// ---------------------------------------------------------------------------
// Query.

QueryOutcome Simulator::flow_query(const std::string& uid, const std::vector<uint8_t>& query_jpeg,
                                   const std::vector<std::string>& sources, size_t m) {
  UserState& usr = user_mut(uid);
  require(!sources.empty(), ErrorKind::contract, "no sources requested");
  require(m >= 1, ErrorKind::contract, "m must be positive");
  CoeffImage query = decode_jpeg(query_jpeg);

  // Trapdoors, one per source, under that source's value key.
  std::vector<std::pair<std::string, const ValKey*>> authorized;
  for (const auto& src : sources) {
    if (usr.owner_val_keys.count(src))
      authorized.emplace_back(src, &usr.owner_val_keys.at(src));
    else if (usr.group_val_keys.count(src))
      authorized.emplace_back(src, &usr.group_val_keys.at(src));
    else
      fail(ErrorKind::authorization, "user holds no key for source " + src);
  }
  Rng trng = usr.keys.fresh_rng("trapdoor");
  auto trapdoors = trap_gen(query, authorized, trng);

  RoundCounter rounds;
  {
    Writer w;
    for (const auto& [src, enc] : trapdoors) {
      w.str(src);
      w.blob(enc.jpeg);
    }
    send("user:" + uid, "cs", MsgKind::query, w.bytes());
  }

  // CS: authorization check, per-source scoring, one merged ranking.
  auto classify = [&](const std::string& src) { return cs_.group_members.count(src) != 0; };
  for (const auto& src : sources) {
    require(cs_.auth.count(src) && cs_.auth.at(src).count(uid), ErrorKind::authorization,
            "no grant for user " + uid + " at source " + src);
  }

  SearchResult merged;
  if (sources.size() == 1) {
    const std::string& src = sources[0];
    Scope scope = classify(src) ? Scope::group(src) : Scope::owner(src);
    auto vit = cs_.vocabs.find(scope.tag());
    require(vit != cs_.vocabs.end(), ErrorKind::contract, "unknown scope: " + scope.tag());
    CoeffImage trap = decode_jpeg(trapdoors[0].second.jpeg);
    merged = search_single(cs_.index, make_bow_feature(trap, vit->second), scope, m,
                           config_.weights);
  } else {
    std::vector<SourceQuery> queries;
    for (const auto& [src, enc] : trapdoors) {
      Scope scope = classify(src) ? Scope::group_global(src) : Scope::owner_global(src);
      auto vit = cs_.vocabs.find(scope.tag());
      require(vit != cs_.vocabs.end(), ErrorKind::contract, "unknown scope: " + scope.tag());
      CoeffImage trap = decode_jpeg(enc.jpeg);
      queries.push_back(SourceQuery{scope, make_bow_feature(trap, vit->second)});
    }
    merged = search_multi(cs_.index, queries, m, config_.weights);
  }

  // One CSKMC round: key request for all hits, transformed keys back.
  struct KeyOut {
    bool wrapped = false;
    std::vector<uint8_t> envelope;  // wrapped form
    EncPosKey plain;                // owner-source form
  };
  std::map<std::string, KeyOut> keys_out;
  {
    Writer w;
    w.str(uid);
    for (const auto& h : merged.hits) {
      w.str(h.iid);
      w.str(h.source_id);
    }
    send("cs", "kmc", MsgKind::key_request, w.bytes());
    ++rounds.cs_kmc;

    Writer resp;
    for (const auto& h : merged.hits) {
      bool grp = classify(h.source_id);
      require(kmc_.auth.count(h.source_id) && kmc_.auth.at(h.source_id).count(uid),
              ErrorKind::authorization, "kmc: no grant for " + uid + " at " + h.source_id);
      const auto& rec = kmc_.pos_store.at(h.iid);
      KeyOut out;
      if (!grp) {
        UserKey& link = kmc_.links.at(h.source_id).at(uid);
        out.plain = kmc_transform(rec.owner_scope, link);
        resp.blob(serialize_enc_pos_key(out.plain));
      } else {
        const std::string& gid = h.source_id;
        const std::string& oid = rec.oid;
        const GroupScopeKeyRecord& grec = rec.group_scopes.at(gid);
        EncPosKey swapped = rec.owner_scope;
        for (int c = 0; c < 3; ++c) swapped.comps[c].bitkey = grec.bitkey[c];
        swapped.mac = grec.mac;
        EncPosKey step1 = kmc_transform(swapped, kmc_.inc_usr.at(gid).at(oid));
        EncPosKey step2 = kmc_transform(step1, kmc_.group_links.at(gid).at(uid));
        out.wrapped = true;
        out.envelope = wrap_for_group(step2, kmc_.wrap_keys.at(gid).at(uid),
                                      kmc_.keys.fresh12("nonce"));
        resp.blob(out.envelope);
      }
      keys_out.emplace(h.iid + "/" + h.source_id, std::move(out));
    }
    send("kmc", "cs", MsgKind::key_response, resp.bytes());
  }

  // One CSuser round: ciphertexts + keys back, user decrypts.
  QueryOutcome outcome;
  outcome.result = merged;
  {
    Writer w;
    for (const auto& h : merged.hits) w.str(h.iid);
    send("cs", "user:" + uid, MsgKind::result, w.bytes());
    ++rounds.cs_user;
  }
  for (const auto& h : merged.hits) {
    bool grp = classify(h.source_id);
    const KeyOut& kout = keys_out.at(h.iid + "/" + h.source_id);
    QueryItem item;
    item.iid = h.iid;
    item.source = h.source_id;
    item.distance = h.distance;
    if (!grp) {
      const EncryptedImage& ct = cs_.images.at(h.iid);
      auto mac_key = pos_key_mac_key(usr.owner_val_keys.at(h.source_id), h.iid);
      PosKey pos = user_recover_pos_key(kout.plain, usr.owner_user_keys.at(h.source_id), mac_key);
      item.decrypted = img_dec(ct, pos, usr.owner_val_keys.at(h.source_id));
    } else {
      const EncryptedImage& ct = cs_.group_images.at(h.source_id).at(h.iid);
      EncPosKey enc2 = unwrap_for_group(kout.envelope, usr.group_wrap_keys.at(h.source_id));
      auto mac_key = pos_key_mac_key(usr.group_val_keys.at(h.source_id), h.iid);
      PosKey pos = user_recover_pos_key(enc2, usr.group_user_keys.at(h.source_id), mac_key);
      item.decrypted = img_dec(ct, pos, usr.group_val_keys.at(h.source_id));
    }
    item.plaintext_jpeg = encode_jpeg(item.decrypted);
    outcome.items.push_back(std::move(item));
  }

  outcome.rounds = rounds;
  last_rounds_ = rounds;
  require(rounds.cs_kmc == 1 && rounds.cs_user == 1 && rounds.kmc_user == 0, ErrorKind::contract,
          "interaction rounds deviate from the constant-round contract");
  verify_knowledge_boundaries();
  return outcome;
}

// ---------------------------------------------------------------------------
// Security report.

SecurityReport Simulator::security_report() {
  SecurityReport rep;
  auto log2_fact = [](int n) {
    double s = 0;
    for (int i = 2; i <= n; ++i) s += std::log2(double(i));
    return s;
  };
  rep.recomputed_feature_bits =
      3.0 * config_.n_pmt1 * log2_fact(20) + 3.0 * config_.n_pmt2 * log2_fact(10);

  for (const auto& [oid, owner] : owners_) {
    for (const auto& [iid, rec] : owner.registry) {
      SecurityReport::PerImage per;
      per.iid = iid;
      per.oid = oid;
      per.strength = security_strength(rec.poskey, config_.n_pmt1, config_.n_pmt2);
      rep.plaintext_bytes += rec.plain_size;
      rep.ciphertext_bytes += cs_.images.at(iid).jpeg.size();

      // KBA flattening: encrypt the plaintext under fresh single-table and
      // five-table value keys and compare chi-squares of the v histograms.
      CoeffImage plain = img_dec(cs_.images.at(iid), rec.poskey, owner.val_key);
      OwnerState& mut_owner = owners_.at(oid);
      for (int npmt : {1, 5}) {
        Rng rng = mut_owner.keys.fresh_rng("report:" + iid + ":" + std::to_string(npmt));
        ValSeeds vs = ValSeeds::fresh(rng);
        ValKey vk = gen_val_key(vs, npmt, npmt);
        PosSeeds ps = PosSeeds::fresh(rng);
        auto [ct, pk] = encrypt_coeffs(plain, iid, vk, ps);
        (npmt == 1 ? per.chi_npmt1 : per.chi_npmt5) = v_hist_chi_square(ct);
      }
      rep.images.push_back(std::move(per));
    }
  }
  return rep;
}

std::string SecurityReport::to_json() const {
  nlohmann::json j;
  j["paper_feature_bits"] = paper_feature_bits;
  j["recomputed_feature_bits"] = recomputed_feature_bits;
  j["plaintext_bytes"] = plaintext_bytes;
  j["ciphertext_bytes"] = ciphertext_bytes;
  j["size_ratio"] = size_ratio();
  auto& arr = j["images"] = nlohmann::json::array();
  for (const auto& p : images) {
    nlohmann::json e;
    e["iid"] = p.iid;
    e["oid"] = p.oid;
    e["sec_img_bits"] = p.strength.total();
    e["terms"] = {{"table_v", p.strength.table_v_bits},
                  {"blknum", p.strength.blknum_bits},
                  {"blksize", p.strength.blksize_bits},
                  {"table_dcl", p.strength.table_dcl_bits},
                  {"xor", p.strength.xor_bits}};
    e["chi_square_npmt1"] = p.chi_npmt1;
    e["chi_square_npmt5"] = p.chi_npmt5;
    arr.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Knowledge boundaries.

namespace {

// Distinctive high-entropy byte needles for "does this store contain that
// key" scans, matching the containers' byte layout.
std::vector<uint8_t> val_key_needle(const ValKey& vk) {
  std::vector<uint8_t> n;
  for (int8_t v : vk.pmtv[0][0]) n.push_back(uint8_t(v));
  for (int8_t v : vk.pmtv[1][0]) n.push_back(uint8_t(v));
  return n;
}

std::vector<uint8_t> user_key_needle(const UserKey& u) {
  Writer w;
  for (uint32_t v : u.upmtp[0][62].mapping()) w.u32(v);
  return w.take();
}

bool contains(const std::vector<uint8_t>& haystack, const std::vector<uint8_t>& needle) {
  if (needle.empty() || haystack.size() < needle.size()) return false;
  auto it = std::search(haystack.begin(), haystack.end(),
                        std::boyer_moore_horspool_searcher(needle.begin(), needle.end()));
  return it != haystack.end();
}

}  // namespace

void Simulator::verify_knowledge_boundaries() const {
  // Serialize the KMC store and scan for any ValKey bytes.
  Writer kw;
  for (const auto& [iid, rec] : kmc_.pos_store) {
    kw.blob(serialize_enc_pos_key(rec.owner_scope));
    for (const auto& [gid, grec] : rec.group_scopes) {
      for (int c = 0; c < 3; ++c)
        for (const auto& b : grec.bitkey[c]) kw.bits(b);
      kw.arr(grec.mac);
    }
  }
  for (const auto& [oid, links] : kmc_.links)
    for (const auto& [uid, k] : links) kw.blob(serialize_user_key(k));
  for (const auto& [gid, links] : kmc_.group_links)
    for (const auto& [uid, k] : links) kw.blob(serialize_user_key(k));
  for (const auto& [gid, incs] : kmc_.inc_usr)
    for (const auto& [oid, k] : incs) kw.blob(serialize_user_key(k));
  const std::vector<uint8_t>& kmc_bytes = kw.bytes();

  for (const auto& [oid, o] : owners_)
    require(!contains(kmc_bytes, val_key_needle(o.val_key)), ErrorKind::contract,
            "KMC state contains owner ValKey bytes");
  for (const auto& [gid, g] : groups_)
    require(!contains(kmc_bytes, val_key_needle(g.val_key)), ErrorKind::contract,
            "KMC state contains group ValKey bytes");

  // Serialize the CS store and scan for unwrapped UserKey bytes.
  Writer cw;
  for (const auto& [gid, incs] : cs_.inc_val)
    for (const auto& [oid, inc] : incs) {
      for (int c = 0; c < 3; ++c) {
        for (const auto& t : inc.dv[c])
          for (int8_t v : t) cw.u8(uint8_t(v));
        for (const auto& t : inc.dl[c])
          for (uint8_t v : t) cw.u8(v);
      }
    }
  cw.blob(cs_.index.serialize());
  const std::vector<uint8_t>& cs_bytes = cw.bytes();

  auto check_userkey_absent = [&](const UserKey& u, const char* what) {
    require(!contains(cs_bytes, user_key_needle(u)), ErrorKind::contract, what);
  };
  for (const auto& [oid, o] : owners_) check_userkey_absent(o.user_key, "CS holds owner UserKey");
  for (const auto& [gid, g] : groups_) check_userkey_absent(g.user_key, "CS holds group UserKey");
  for (const auto& [uid, u] : users_) {
    for (const auto& [oid, k] : u.owner_user_keys)
      check_userkey_absent(k, "CS holds user UserKey");
    for (const auto& [gid, k] : u.group_user_keys)
      check_userkey_absent(k, "CS holds user UserKey");
  }

  // Users never talk to the KMC.
  for (const Message& m : log_) {
    bool user_kmc = (m.sender.rfind("user:", 0) == 0 && m.receiver == "kmc") ||
                    (m.sender == "kmc" && m.receiver.rfind("user:", 0) == 0);
    require(!user_kmc, ErrorKind::contract, "user exchanged a message with the KMC");
  }
}

// ---------------------------------------------------------------------------
// Workspace persistence.

namespace {

constexpr char kStateMagic[4] = {'J', 'E', 'S', 'W'};
constexpr uint16_t kStateVersion = 1;

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

void put_key_source(Writer& w, const KeySource& s) {
  put_seed(w, s.base);
  w.u64(s.counter);
}
KeySource get_key_source(Reader& r) {
  KeySource s;
  s.base = get_seed(r);
  s.counter = r.u64();
  return s;
}

void put_val_seeds(Writer& w, const ValSeeds& s) {
  for (int c = 0; c < 3; ++c) {
    put_seed(w, s.key_v[c]);
    put_seed(w, s.key_l[c]);
  }
}
ValSeeds get_val_seeds(Reader& r) {
  ValSeeds s;
  for (int c = 0; c < 3; ++c) {
    s.key_v[c] = get_seed(r);
    s.key_l[c] = get_seed(r);
  }
  return s;
}

void put_pos_seeds(Writer& w, const PosSeeds& s) {
  for (int c = 0; c < 3; ++c) {
    put_seed(w, s.key_blo[c]);
    put_seed(w, s.key_inblo[c]);
    put_seed(w, s.key_dc[c]);
  }
}
PosSeeds get_pos_seeds(Reader& r) {
  PosSeeds s;
  for (int c = 0; c < 3; ++c) {
    s.key_blo[c] = get_seed(r);
    s.key_inblo[c] = get_seed(r);
    s.key_dc[c] = get_seed(r);
  }
  return s;
}

void write_file(const fs::path& p, const std::vector<uint8_t>& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorKind::io, "cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(f.good(), ErrorKind::io, "short write to " + p.string());
}

std::vector<uint8_t> read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<uint8_t> owner_state_bytes(const OwnerState& o) {
  Writer w;
  put_magic(w, kStateMagic, kStateVersion);
  w.str(o.oid);
  put_key_source(w, o.keys);
  put_val_seeds(w, o.val_seeds);
  w.blob(serialize_val_key(o.val_key));
  w.blob(serialize_user_key(o.user_key));
  w.u32(uint32_t(o.registry.size()));
  for (const auto& [iid, rec] : o.registry) {
    w.str(iid);
    w.blob(serialize_pos_key(rec.poskey));
    put_pos_seeds(w, rec.pos_seeds);
    w.u64(rec.plain_size);
    for (uint32_t n : rec.blknum) w.u32(n);
  }
  w.u32(uint32_t(o.granted.size()));
  for (const auto& [uid, k] : o.granted) {
    w.str(uid);
    w.blob(serialize_user_key(k));
  }
  w.u32(uint32_t(o.groups.size()));
  for (const auto& g : o.groups) w.str(g);
  w.u64(o.next_iid);
  return w.take();
}

OwnerState owner_state_from(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kStateMagic, kStateVersion);
  OwnerState o;
  o.oid = r.str();
  o.keys = get_key_source(r);
  o.val_seeds = get_val_seeds(r);
  o.val_key = deserialize_val_key(r.blob());
  o.user_key = deserialize_user_key(r.blob());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    OwnerState::ImageRecord rec;
    rec.iid = r.str();
    rec.poskey = deserialize_pos_key(r.blob());
    rec.pos_seeds = get_pos_seeds(r);
    rec.plain_size = r.u64();
    for (auto& b : rec.blknum) b = r.u32();
    o.registry.emplace(rec.iid, std::move(rec));
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string uid = r.str();
    o.granted.emplace(std::move(uid), deserialize_user_key(r.blob()));
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) o.groups.insert(r.str());
  o.next_iid = r.u64();
  return o;
}

std::vector<uint8_t> user_state_bytes(const UserState& u) {
  Writer w;
  put_magic(w, kStateMagic, kStateVersion);
  w.str(u.uid);
  put_key_source(w, u.keys);
  auto put_valmap = [&w](const std::map<std::string, ValKey>& m) {
    w.u32(uint32_t(m.size()));
    for (const auto& [id, k] : m) {
      w.str(id);
      w.blob(serialize_val_key(k));
    }
  };
  auto put_ukeymap = [&w](const std::map<std::string, UserKey>& m) {
    w.u32(uint32_t(m.size()));
    for (const auto& [id, k] : m) {
      w.str(id);
      w.blob(serialize_user_key(k));
    }
  };
  put_valmap(u.owner_val_keys);
  put_ukeymap(u.owner_user_keys);
  put_valmap(u.group_val_keys);
  put_ukeymap(u.group_user_keys);
  w.u32(uint32_t(u.group_wrap_keys.size()));
  for (const auto& [gid, k] : u.group_wrap_keys) {
    w.str(gid);
    w.arr(k);
  }
  return w.take();
}

UserState user_state_from(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kStateMagic, kStateVersion);
  UserState u;
  u.uid = r.str();
  u.keys = get_key_source(r);
  auto get_valmap = [&r](std::map<std::string, ValKey>& m) {
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
      std::string id = r.str();
      m.emplace(std::move(id), deserialize_val_key(r.blob()));
    }
  };
  auto get_ukeymap = [&r](std::map<std::string, UserKey>& m) {
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
      std::string id = r.str();
      m.emplace(std::move(id), deserialize_user_key(r.blob()));
    }
  };
  get_valmap(u.owner_val_keys);
  get_ukeymap(u.owner_user_keys);
  get_valmap(u.group_val_keys);
  get_ukeymap(u.group_user_keys);
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string gid = r.str();
    u.group_wrap_keys.emplace(std::move(gid), r.arr<32>());
  }
  return u;
}

std::vector<uint8_t> group_state_bytes(const GroupState& g) {
  Writer w;
  put_magic(w, kStateMagic, kStateVersion);
  w.str(g.gid);
  put_key_source(w, g.keys);
  put_val_seeds(w, g.val_seeds);
  w.blob(serialize_val_key(g.val_key));
  w.blob(serialize_user_key(g.user_key));
  w.u32(uint32_t(g.members.size()));
  for (const auto& m : g.members) w.str(m);
  w.u32(uint32_t(g.granted.size()));
  for (const auto& [uid, k] : g.granted) {
    w.str(uid);
    w.blob(serialize_user_key(k));
  }
  w.u32(uint32_t(g.wrap_keys.size()));
  for (const auto& [uid, k] : g.wrap_keys) {
    w.str(uid);
    w.arr(k);
  }
  w.u32(uint32_t(g.member_sizes.size()));
  for (const auto& s : g.member_sizes)
    for (uint32_t v : s) w.u32(v);
  return w.take();
}

GroupState group_state_from(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kStateMagic, kStateVersion);
  GroupState g;
  g.gid = r.str();
  g.keys = get_key_source(r);
  g.val_seeds = get_val_seeds(r);
  g.val_key = deserialize_val_key(r.blob());
  g.user_key = deserialize_user_key(r.blob());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) g.members.insert(r.str());
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string uid = r.str();
    g.granted.emplace(std::move(uid), deserialize_user_key(r.blob()));
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string uid = r.str();
    g.wrap_keys.emplace(std::move(uid), r.arr<32>());
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::array<uint32_t, 3> s;
    for (auto& v : s) v = r.u32();
    g.member_sizes.insert(s);
  }
  return g;
}

std::vector<uint8_t> kmc_state_bytes(const KmcState& k) {
  Writer w;
  put_magic(w, kStateMagic, kStateVersion);
  put_key_source(w, k.keys);
  w.u32(uint32_t(k.pos_store.size()));
  for (const auto& [iid, rec] : k.pos_store) {
    w.str(iid);
    w.str(rec.oid);
    w.blob(serialize_enc_pos_key(rec.owner_scope));
    w.u32(uint32_t(rec.group_scopes.size()));
    for (const auto& [gid, grec] : rec.group_scopes) {
      w.str(gid);
      for (int c = 0; c < 3; ++c) {
        w.u32(uint32_t(grec.bitkey[c].size()));
        for (const auto& b : grec.bitkey[c]) w.bits(b);
      }
      w.arr(grec.mac);
    }
  }
  auto put_keymap2 = [&w](const std::map<std::string, std::map<std::string, UserKey>>& m) {
    w.u32(uint32_t(m.size()));
    for (const auto& [a, inner] : m) {
      w.str(a);
      w.u32(uint32_t(inner.size()));
      for (const auto& [b, key] : inner) {
        w.str(b);
        w.blob(serialize_user_key(key));
      }
    }
  };
  put_keymap2(k.links);
  put_keymap2(k.group_links);
  put_keymap2(k.inc_usr);
  w.u32(uint32_t(k.wrap_keys.size()));
  for (const auto& [gid, inner] : k.wrap_keys) {
    w.str(gid);
    w.u32(uint32_t(inner.size()));
    for (const auto& [uid, key] : inner) {
      w.str(uid);
      w.arr(key);
    }
  }
  w.u32(uint32_t(k.auth.size()));
  for (const auto& [src, uids] : k.auth) {
    w.str(src);
    w.u32(uint32_t(uids.size()));
    for (const auto& u : uids) w.str(u);
  }
  return w.take();
}

KmcState kmc_state_from(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kStateMagic, kStateVersion);
  KmcState k;
  k.keys = get_key_source(r);
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string iid = r.str();
    KmcState::PosRecord rec;
    rec.oid = r.str();
    rec.owner_scope = deserialize_enc_pos_key(r.blob());
    uint32_t ng = r.u32();
    for (uint32_t j = 0; j < ng; ++j) {
      std::string gid = r.str();
      GroupScopeKeyRecord grec;
      for (int c = 0; c < 3; ++c) {
        grec.bitkey[c].resize(r.u32());
        for (auto& b : grec.bitkey[c]) b = r.bits();
      }
      grec.mac = r.arr<32>();
      rec.group_scopes.emplace(std::move(gid), std::move(grec));
    }
    k.pos_store.emplace(std::move(iid), std::move(rec));
  }
  auto get_keymap2 = [&r](std::map<std::string, std::map<std::string, UserKey>>& m) {
    uint32_t outer = r.u32();
    for (uint32_t i = 0; i < outer; ++i) {
      std::string a = r.str();
      uint32_t inner = r.u32();
      for (uint32_t j = 0; j < inner; ++j) {
        std::string b = r.str();
        m[a].emplace(std::move(b), deserialize_user_key(r.blob()));
      }
      m[a];
    }
  };
  get_keymap2(k.links);
  get_keymap2(k.group_links);
  get_keymap2(k.inc_usr);
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string gid = r.str();
    uint32_t inner = r.u32();
    for (uint32_t j = 0; j < inner; ++j) {
      std::string uid = r.str();
      k.wrap_keys[gid].emplace(std::move(uid), r.arr<32>());
    }
    k.wrap_keys[gid];
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string src = r.str();
    uint32_t cnt = r.u32();
    auto& set = k.auth[src];
    for (uint32_t j = 0; j < cnt; ++j) set.insert(r.str());
  }
  return k;
}

std::vector<uint8_t> cs_meta_bytes(const CsState& cs) {
  Writer w;
  put_magic(w, kStateMagic, kStateVersion);
  w.u32(uint32_t(cs.images.size()));
  for (const auto& [iid, enc] : cs.images) {
    w.str(iid);
    w.str(enc.owner_id);
    w.u32(uint32_t(enc.n_pmt1));
    w.u32(uint32_t(enc.n_pmt2));
  }
  w.u32(uint32_t(cs.group_images.size()));
  for (const auto& [gid, inner] : cs.group_images) {
    w.str(gid);
    w.u32(uint32_t(inner.size()));
    for (const auto& [iid, enc] : inner) {
      w.str(iid);
      w.u32(uint32_t(enc.n_pmt1));
      w.u32(uint32_t(enc.n_pmt2));
    }
  }
  w.u32(uint32_t(cs.vocabs.size()));
  for (const auto& [tag_str, v] : cs.vocabs) {
    w.str(tag_str);
    for (int c = 0; c < 3; ++c) w.blob(serialize_vocabulary(v[size_t(c)]));
  }
  w.u32(uint32_t(cs.inc_val.size()));
  for (const auto& [gid, inner] : cs.inc_val) {
    w.str(gid);
    w.u32(uint32_t(inner.size()));
    for (const auto& [oid, inc] : inner) {
      w.str(oid);
      w.u32(uint32_t(inc.n_pmt1));
      w.u32(uint32_t(inc.n_pmt2));
      for (int c = 0; c < 3; ++c) {
        for (const auto& t : inc.dv[c])
          for (int8_t x : t) w.u8(uint8_t(x));
        for (const auto& t : inc.dl[c])
          for (uint8_t x : t) w.u8(x);
      }
    }
  }
  auto put_setmap = [&w](const std::map<std::string, std::set<std::string>>& m) {
    w.u32(uint32_t(m.size()));
    for (const auto& [key, vals] : m) {
      w.str(key);
      w.u32(uint32_t(vals.size()));
      for (const auto& v : vals) w.str(v);
    }
  };
  put_setmap(cs.auth);
  put_setmap(cs.group_members);
  return w.take();
}

void cs_meta_from(const std::vector<uint8_t>& bytes, CsState& cs,
                  const std::map<std::string, std::vector<uint8_t>>& image_files,
                  const std::map<std::string, std::map<std::string, std::vector<uint8_t>>>&
                      group_image_files) {
  Reader r(bytes);
  expect_magic(r, kStateMagic, kStateVersion);
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    EncryptedImage enc;
    enc.iid = r.str();
    enc.owner_id = r.str();
    enc.n_pmt1 = int(r.u32());
    enc.n_pmt2 = int(r.u32());
    auto it = image_files.find(enc.iid);
    require(it != image_files.end(), ErrorKind::io, "missing ciphertext file for " + enc.iid);
    enc.jpeg = it->second;
    cs.owner_of[enc.iid] = enc.owner_id;
    cs.images.emplace(enc.iid, std::move(enc));
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string gid = r.str();
    uint32_t inner = r.u32();
    for (uint32_t j = 0; j < inner; ++j) {
      EncryptedImage enc;
      enc.iid = r.str();
      enc.owner_id = gid;
      enc.n_pmt1 = int(r.u32());
      enc.n_pmt2 = int(r.u32());
      enc.jpeg = group_image_files.at(gid).at(enc.iid);
      cs.group_images[gid].emplace(enc.iid, std::move(enc));
    }
    cs.group_images[gid];
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string tag_str = r.str();
    std::array<Vocabulary, 3> v;
    for (int c = 0; c < 3; ++c) v[size_t(c)] = deserialize_vocabulary(r.blob());
    cs.vocabs.emplace(std::move(tag_str), std::move(v));
  }
  n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string gid = r.str();
    uint32_t inner = r.u32();
    for (uint32_t j = 0; j < inner; ++j) {
      std::string oid = r.str();
      IncValKey inc;
      inc.n_pmt1 = int(r.u32());
      inc.n_pmt2 = int(r.u32());
      for (int c = 0; c < 3; ++c) {
        inc.dv[c].resize(size_t(inc.n_pmt1));
        for (auto& t : inc.dv[c])
          for (auto& x : t) x = int8_t(r.u8());
        inc.dl[c].resize(size_t(inc.n_pmt2));
        for (auto& t : inc.dl[c])
          for (auto& x : t) x = r.u8();
      }
      cs.inc_val[gid].emplace(std::move(oid), std::move(inc));
    }
    cs.inc_val[gid];
  }
  auto get_setmap = [&r](std::map<std::string, std::set<std::string>>& m) {
    uint32_t outer = r.u32();
    for (uint32_t i = 0; i < outer; ++i) {
      std::string key = r.str();
      uint32_t cnt = r.u32();
      auto& set = m[key];
      for (uint32_t j = 0; j < cnt; ++j) set.insert(r.str());
    }
  };
  get_setmap(cs.auth);
  get_setmap(cs.group_members);
}

}  // namespace

void Simulator::init_workspace(const fs::path& dir, const SystemConfig& config) {
  require(!fs::exists(dir / "config.json"), ErrorKind::duplicate,
          "workspace already initialized: " + dir.string());
  fs::create_directories(dir / "cs" / "images");
  fs::create_directories(dir / "kmc");
  fs::create_directories(dir / "owners");
  fs::create_directories(dir / "users");
  fs::create_directories(dir / "groups");
  fs::create_directories(dir / "log");
  config.save((dir / "config.json").string());
  std::ofstream log(dir / "log" / "messages.jsonl", std::ios::app);
}

Simulator Simulator::load(const fs::path& dir) {
  require(fs::exists(dir / "config.json"), ErrorKind::not_found,
          "not a workspace (missing config.json): " + dir.string());
  Simulator sim(SystemConfig::load((dir / "config.json").string()), dir);

  auto load_states = [&](const fs::path& sub, auto reader, auto& into) {
    if (!fs::exists(dir / sub)) return;
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir / sub))
      if (e.is_directory() && fs::exists(e.path() / "state.bin")) paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
      auto st = reader(read_file(p / "state.bin"));
      auto id = p.filename().string();
      into.emplace(id, std::move(st));
    }
  };
  load_states("owners", owner_state_from, sim.owners_);
  load_states("users", user_state_from, sim.users_);
  load_states("groups", group_state_from, sim.groups_);

  if (fs::exists(dir / "kmc" / "store.bin"))
    sim.kmc_ = kmc_state_from(read_file(dir / "kmc" / "store.bin"));
  else
    sim.kmc_.keys = entity_key_source(sim.config_.seed, "kmc");

  if (fs::exists(dir / "cs" / "meta.bin")) {
    std::map<std::string, std::vector<uint8_t>> images;
    for (const auto& e : fs::directory_iterator(dir / "cs" / "images"))
      images[e.path().stem().string()] = read_file(e.path());
    std::map<std::string, std::map<std::string, std::vector<uint8_t>>> group_images;
    if (fs::exists(dir / "cs" / "group_images"))
      for (const auto& g : fs::directory_iterator(dir / "cs" / "group_images"))
        if (g.is_directory())
          for (const auto& e : fs::directory_iterator(g.path()))
            group_images[g.path().filename().string()][e.path().stem().string()] =
                read_file(e.path());
    cs_meta_from(read_file(dir / "cs" / "meta.bin"), sim.cs_, images, group_images);
    sim.cs_.index = LinearIndex::deserialize(read_file(dir / "cs" / "index.bin"));
  }

  // The message log is append-only; count existing lines so new entries keep
  // sequence numbers monotone.
  if (fs::exists(dir / "log" / "messages.jsonl")) {
    std::ifstream f(dir / "log" / "messages.jsonl");
    std::string line;
    uint64_t lines = 0;
    while (std::getline(f, line))
      if (!line.empty()) ++lines;
    sim.log_.resize(lines);  // placeholders; only new messages are flushed
    for (uint64_t i = 0; i < lines; ++i) sim.log_[i].seq = i + 1;
    sim.flushed_log_ = lines;
  }
  return sim;
}

void Simulator::save() {
  require(!dir_.empty(), ErrorKind::contract, "simulator has no workspace directory");
  fs::create_directories(dir_ / "cs" / "images");
  fs::create_directories(dir_ / "kmc");
  fs::create_directories(dir_ / "log");
  config_.save((dir_ / "config.json").string());

  for (const auto& [oid, o] : owners_)
    write_file(dir_ / "owners" / oid / "state.bin", owner_state_bytes(o));
  for (const auto& [uid, u] : users_)
    write_file(dir_ / "users" / uid / "state.bin", user_state_bytes(u));
  for (const auto& [gid, g] : groups_)
    write_file(dir_ / "groups" / gid / "state.bin", group_state_bytes(g));
  write_file(dir_ / "kmc" / "store.bin", kmc_state_bytes(kmc_));

  // Ciphertext JPEGs as individual files; prune deleted ones.
  std::set<std::string> want;
  for (const auto& [iid, enc] : cs_.images) {
    want.insert(iid + ".jpg");
    write_file(dir_ / "cs" / "images" / (iid + ".jpg"), enc.jpeg);
  }
  for (const auto& e : fs::directory_iterator(dir_ / "cs" / "images"))
    if (!want.count(e.path().filename().string())) fs::remove(e.path());
  if (fs::exists(dir_ / "cs" / "group_images")) fs::remove_all(dir_ / "cs" / "group_images");
  for (const auto& [gid, inner] : cs_.group_images)
    for (const auto& [iid, enc] : inner)
      write_file(dir_ / "cs" / "group_images" / gid / (iid + ".jpg"), enc.jpeg);

  write_file(dir_ / "cs" / "meta.bin", cs_meta_bytes(cs_));
  write_file(dir_ / "cs" / "index.bin", cs_.index.serialize());

  std::ofstream log(dir_ / "log" / "messages.jsonl", std::ios::app);
  for (size_t i = flushed_log_; i < log_.size(); ++i) {
    const Message& m = log_[i];
    nlohmann::json j;
    j["seq"] = m.seq;
    j["from"] = m.sender;
    j["to"] = m.receiver;
    j["kind"] = std::string(to_string(m.kind));
    j["digest"] = m.digest;
    j["bytes"] = m.payload_size;
    log << j.dump() << "\n";
  }
  flushed_log_ = log_.size();
}

}  // namespace jes
