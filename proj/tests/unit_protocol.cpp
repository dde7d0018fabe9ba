#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "jes/error.hpp"
#include "jes/jpeg_codec.hpp"
#include "jes/protocol.hpp"
#include "support/corpus.hpp"

using namespace jes;
namespace jt = jes::test;
namespace fs = std::filesystem;

namespace {

SystemConfig small_config(uint64_t seed = 11) {
  SystemConfig c;
  c.seed = seed;
  c.k_owner = {8, 4, 4};
  c.k_global = {8, 4, 4};
  return c;
}

std::vector<std::vector<uint8_t>> small_batch(int n, int cat_base = 0) {
  std::vector<std::vector<uint8_t>> out;
  for (int i = 0; i < n; ++i)
    out.push_back(jt::compress_jpeg(jt::make_texture(64, 48, cat_base + i % 3, i), 80, i % 2 == 0));
  return out;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("jes_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("outsourcing: CS and KMC post-state") {
  Simulator sim(small_config(), temp_dir("outsource"));
  sim.add_owner("o1");
  auto iids = sim.flow_outsource("o1", small_batch(4));
  CHECK(iids.size() == 4);
  CHECK(sim.cs().images.size() == 4);
  CHECK(sim.cs().index.size() == 4);
  CHECK(sim.kmc().pos_store.size() == 4);
  for (const auto& iid : iids) {
    CHECK(sim.cs().images.count(iid));
    CHECK(sim.cs().index.contains(iid));
    CHECK(sim.kmc().pos_store.count(iid));
    const IndexRow& row = sim.cs().index.rows().at(iid);
    CHECK(row.features.count("owner:o1"));
    CHECK(row.features.count("global:o1"));
  }
}

TEST_CASE("authorization gates queries at CS and KMC") {
  Simulator sim(small_config(), temp_dir("auth"));
  sim.add_owner("o1");
  auto iids = sim.flow_outsource("o1", small_batch(3));
  sim.add_user("u1");

  auto query = jt::compress_jpeg(jt::make_texture(64, 48, 0, 9), 80, true);
  CHECK_THROWS_AS(sim.flow_query("u1", query, {"o1"}, 3), Error);

  sim.flow_authorize("o1", "u1");
  auto outcome = sim.flow_query("u1", query, {"o1"}, 3);
  CHECK(outcome.result.hits.size() == 3);

  // KMC stores the link key, never the owner's own user key
  CHECK(sim.kmc().links.at("o1").count("u1"));
  CHECK_FALSE(sim.kmc().links.at("o1").at("u1") == sim.owner("o1").user_key);
  CHECK_THROWS_AS(sim.flow_authorize("o1", "u1"), Error);
}

TEST_CASE("query: rounds, self-retrieval, user-side decryption") {
  Simulator sim(small_config(), temp_dir("query"));
  sim.add_owner("o1");
  auto batch = small_batch(5);
  auto iids = sim.flow_outsource("o1", batch);
  sim.add_user("u1");
  sim.flow_authorize("o1", "u1");

  // query with an ingested image: its own ciphertext must rank first
  auto outcome = sim.flow_query("u1", batch[2], {"o1"}, 5);
  CHECK(outcome.rounds.cs_kmc == 1);
  CHECK(outcome.rounds.cs_user == 1);
  CHECK(outcome.rounds.kmc_user == 0);
  REQUIRE(!outcome.result.hits.empty());
  // self image is either rank 1 or tied with rank 1 at equal distance
  CHECK(outcome.result.hits[0].distance <=
        [&] {
          for (const auto& h : outcome.result.hits)
            if (h.iid == iids[2]) return h.distance;
          return 1e300;
        }());
  bool self_found = false;
  for (const auto& h : outcome.result.hits) self_found |= h.iid == iids[2];
  CHECK(self_found);

  // decrypted results equal the original plaintext coefficients
  CoeffImage original = decode_jpeg(batch[2]);
  for (const auto& item : outcome.items) {
    if (item.iid == iids[2]) CHECK(item.decrypted == original);
    CHECK(!item.plaintext_jpeg.empty());
  }
}

TEST_CASE("group lifecycle: join, group query, leave") {
  Simulator sim(small_config(), temp_dir("group"));
  sim.add_owner("o1");
  sim.add_owner("o2");
  auto b1 = small_batch(3, 0);
  auto b2 = small_batch(3, 3);
  auto iids1 = sim.flow_outsource("o1", b1);
  auto iids2 = sim.flow_outsource("o2", b2);

  sim.flow_group_create("g1");
  sim.flow_group_join("g1", "o1");
  sim.flow_group_join("g1", "o2");

  sim.add_user("u1");
  sim.flow_group_authorize("g1", "u1");

  // group query sees members' images and decrypts them end to end
  auto outcome = sim.flow_query("u1", b2[1], {"g1"}, 4);
  CHECK(outcome.rounds.cs_kmc == 1);
  CHECK(outcome.rounds.cs_user == 1);
  CHECK(outcome.rounds.kmc_user == 0);
  bool self_found = false;
  for (const auto& item : outcome.items) {
    if (item.iid == iids2[1]) {
      self_found = true;
      CHECK(item.decrypted == decode_jpeg(b2[1]));
    }
  }
  CHECK(self_found);

  // after leave, o1's images vanish from the group scope
  sim.flow_group_leave("g1", "o1");
  auto after = sim.flow_query("u1", b1[0], {"g1"}, 10);
  for (const auto& h : after.result.hits)
    CHECK(sim.cs().owner_of.at(h.iid) == "o2");
  CHECK(sim.cs().group_images.at("g1").size() == 3);
  CHECK_FALSE(sim.kmc().inc_usr.at("g1").count("o1"));
}

TEST_CASE("multi-source query merges single result message") {
  Simulator sim(small_config(), temp_dir("multi"));
  for (int o = 1; o <= 3; ++o) {
    std::string oid = "o" + std::to_string(o);
    sim.add_owner(oid);
    sim.flow_outsource(oid, small_batch(2, o));
  }
  sim.add_user("u1");
  for (int o = 1; o <= 3; ++o) sim.flow_authorize("o" + std::to_string(o), "u1");

  auto query = jt::compress_jpeg(jt::make_texture(64, 48, 1, 7), 80, false);
  auto outcome = sim.flow_query("u1", query, {"o1", "o2", "o3"}, 4);
  CHECK(outcome.rounds.cs_kmc == 1);
  CHECK(outcome.rounds.cs_user == 1);
  CHECK(outcome.rounds.kmc_user == 0);
  CHECK(outcome.result.hits.size() == 4);
  for (const auto& item : outcome.items) CHECK(!item.plaintext_jpeg.empty());

  // unauthorized source in the list: rejected even when others are granted
  CHECK_THROWS_AS(sim.flow_query("u1", query, {"o1", "nope"}, 2), Error);
}

TEST_CASE("image add and delete update every store") {
  Simulator sim(small_config(), temp_dir("update"));
  sim.add_owner("o1");
  sim.flow_outsource("o1", small_batch(3));
  sim.add_user("u1");
  sim.flow_authorize("o1", "u1");

  auto extra = jt::compress_jpeg(jt::make_texture(64, 48, 2, 11), 80, true);
  std::string iid = sim.flow_image_add("o1", extra);
  CHECK(sim.cs().images.count(iid));
  CHECK(sim.cs().index.contains(iid));
  CHECK(sim.kmc().pos_store.count(iid));

  // the addition is immediately searchable and decryptable
  auto outcome = sim.flow_query("u1", extra, {"o1"}, 4);
  bool found = false;
  for (const auto& item : outcome.items)
    if (item.iid == iid) {
      found = true;
      CHECK(item.decrypted == decode_jpeg(extra));
    }
  CHECK(found);

  sim.flow_image_delete("o1", iid);
  CHECK_FALSE(sim.cs().images.count(iid));
  CHECK_FALSE(sim.cs().index.contains(iid));
  CHECK_FALSE(sim.kmc().pos_store.count(iid));
  CHECK_THROWS_AS(sim.flow_image_delete("o1", iid), Error);

  auto after = sim.flow_query("u1", extra, {"o1"}, 10);
  for (const auto& h : after.result.hits) CHECK(h.iid != iid);
}

TEST_CASE("knowledge boundaries hold after every flow") {
  Simulator sim(small_config(), temp_dir("bounds"));
  sim.add_owner("o1");
  sim.flow_outsource("o1", small_batch(2));
  sim.add_user("u1");
  sim.flow_authorize("o1", "u1");
  sim.flow_group_create("g1");
  sim.flow_group_join("g1", "o1");
  sim.flow_group_authorize("g1", "u1");
  auto query = jt::compress_jpeg(jt::make_texture(64, 48, 0, 3), 80, true);
  sim.flow_query("u1", query, {"o1", "g1"}, 2);
  sim.verify_knowledge_boundaries();

  // no user<->kmc traffic in the log
  for (const Message& m : sim.log()) {
    bool user_to_kmc = m.sender.rfind("user:", 0) == 0 && m.receiver == "kmc";
    bool kmc_to_user = m.sender == "kmc" && m.receiver.rfind("user:", 0) == 0;
    CHECK_FALSE(user_to_kmc);
    CHECK_FALSE(kmc_to_user);
  }
}

TEST_CASE("security report: terms, flattening, both feature-security figures") {
  Simulator sim(small_config(), temp_dir("report"));
  sim.add_owner("o1");
  sim.flow_outsource("o1", small_batch(3));
  SecurityReport rep = sim.security_report();
  REQUIRE(rep.images.size() == 3);
  CHECK(rep.paper_feature_bits == doctest::Approx(642.0));
  CHECK(rep.recomputed_feature_bits == doctest::Approx(1243.04).epsilon(0.001));
  for (const auto& p : rep.images) {
    CHECK(p.strength.total() > rep.recomputed_feature_bits);
    CHECK(p.chi_npmt5 < p.chi_npmt1);  // multi-table flattening
  }
  CHECK(rep.ciphertext_bytes > 0);
  CHECK(rep.plaintext_bytes > 0);
  std::string json = rep.to_json();
  CHECK(json.find("\"recomputed_feature_bits\"") != std::string::npos);
}

TEST_CASE("workspace save/load round trip preserves behavior") {
  fs::path dir = temp_dir("persist");
  SystemConfig cfg = small_config();
  Simulator::init_workspace(dir, cfg);
  auto batch = small_batch(3);
  std::vector<std::string> iids;
  {
    Simulator sim = Simulator::load(dir);
    sim.add_owner("o1");
    iids = sim.flow_outsource("o1", batch);
    sim.add_user("u1");
    sim.flow_authorize("o1", "u1");
    sim.save();
  }
  {
    Simulator sim = Simulator::load(dir);
    CHECK(sim.cs().images.size() == 3);
    auto outcome = sim.flow_query("u1", batch[0], {"o1"}, 3);
    CHECK(outcome.rounds.cs_kmc == 1);
    bool self_found = false;
    for (const auto& item : outcome.items)
      if (item.iid == iids[0]) {
        self_found = true;
        CHECK(item.decrypted == decode_jpeg(batch[0]));
      }
    CHECK(self_found);
    sim.save();
  }
  // messages.jsonl grew and contains no user->kmc lines
  std::ifstream log(dir / "log" / "messages.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(line.find("\"from\":\"user:u1\",\"to\":\"kmc\"") == std::string::npos);
  }
  CHECK(lines > 0);
}

TEST_CASE("replay determinism: same seed and flow order, identical state bytes") {
  auto run = [](const fs::path& dir) {
    SystemConfig cfg = small_config(99);
    Simulator::init_workspace(dir, cfg);
    Simulator sim = Simulator::load(dir);
    sim.add_owner("o1");
    auto batch = small_batch(2);
    sim.flow_outsource("o1", batch);
    sim.add_user("u1");
    sim.flow_authorize("o1", "u1");
    sim.flow_query("u1", batch[1], {"o1"}, 2);
    sim.save();
  };
  fs::path d1 = temp_dir("replay1");
  fs::path d2 = temp_dir("replay2");
  run(d1);
  run(d2);

  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  for (const char* rel :
       {"kmc/store.bin", "cs/meta.bin", "cs/index.bin", "owners/o1/state.bin",
        "users/u1/state.bin", "log/messages.jsonl"}) {
    CHECK(slurp(d1 / rel) == slurp(d2 / rel));
  }
  // ciphertext files byte-identical as well
  for (const auto& e : fs::directory_iterator(d1 / "cs" / "images"))
    CHECK(slurp(e.path()) == slurp(d2 / "cs" / "images" / e.path().filename()));
}
