// jesmsir: command-line driver for the JPEG-domain multi-source encrypted
// retrieval toolkit. Each command maps onto one protocol flow against a
// persistent workspace directory.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "jes/error.hpp"
#include "jes/jpeg_codec.hpp"
#include "jes/protocol.hpp"

namespace fs = std::filesystem;
using namespace jes;

namespace {

std::vector<uint8_t> read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::vector<uint8_t>& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorKind::io, "cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::vector<fs::path> jpeg_files_under(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::io, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    for (auto& c : ext) c = char(std::tolower(c));
    if (ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

struct EvalOptions {
  std::string corpus;
  int sources = 1;
  int kg = 0;
  int top = 10;
  int queries = 0;  // 0 = all
  std::string csv;
};

int run_eval(const fs::path& workspace, EvalOptions opt) {
  SystemConfig config = SystemConfig::load((workspace / "config.json").string());
  if (opt.kg > 0) config.k_global = {opt.kg, std::max(1, opt.kg / 4), std::max(1, opt.kg / 4)};

  fs::path run_dir = workspace / "eval-run";
  fs::remove_all(run_dir);
  Simulator::init_workspace(run_dir, config);
  Simulator sim(config, run_dir);

  auto files = jpeg_files_under(opt.corpus);
  require(!files.empty(), ErrorKind::io, "no JPEG files under " + opt.corpus);

  // Deterministic random partition across synthetic owners.
  Rng part(derive_seed_key(config.seed, "eval-partition"), tag("eval"));
  std::vector<std::string> owners;
  for (int i = 0; i < opt.sources; ++i) {
    std::string oid = "src" + std::to_string(i + 1);
    owners.push_back(oid);
    sim.add_owner(oid);
  }
  std::map<std::string, std::vector<std::vector<uint8_t>>> batches;
  struct QueryRec {
    fs::path file;
    std::string category;
  };
  std::vector<QueryRec> queries;
  std::vector<std::pair<std::string, std::string>> assignments;  // (owner, category) in file order
  for (const auto& f : files) {
    std::string owner = owners[size_t(part.uniform(uint64_t(owners.size())))];
    std::string category = f.parent_path().filename().string();
    batches[owner].push_back(read_file(f));
    assignments.emplace_back(owner, category);
    queries.push_back(QueryRec{f, category});
  }

  std::map<std::string, std::string> category_by_iid;
  {
    // flow_outsource assigns iids sequentially per owner in batch order.
    std::map<std::string, size_t> cursor;
    std::map<std::string, std::vector<std::string>> iids;
    for (const auto& [owner, batch] : batches) iids[owner] = sim.flow_outsource(owner, batch);
    for (const auto& [owner, category] : assignments)
      category_by_iid[iids[owner][cursor[owner]++]] = category;
  }

  sim.add_user("eval-user");
  for (const auto& oid : owners) sim.flow_authorize(oid, "eval-user");

  size_t n_queries = opt.queries > 0 ? std::min(size_t(opt.queries), queries.size())
                                     : queries.size();
  std::ostringstream csv;
  csv << "query,rank,iid,source,distance,correct\n";
  double sum_pm = 0;
  for (size_t q = 0; q < n_queries; ++q) {
    auto outcome = sim.flow_query("eval-user", read_file(queries[q].file), owners,
                                  size_t(opt.top));
    double pm = precision_at_m(outcome.result, category_by_iid, queries[q].category,
                               size_t(opt.top));
    sum_pm += pm;
    for (size_t rnk = 0; rnk < outcome.result.hits.size(); ++rnk) {
      const auto& h = outcome.result.hits[rnk];
      bool correct = category_by_iid.count(h.iid) &&
                     category_by_iid.at(h.iid) == queries[q].category;
      csv << queries[q].file.filename().string() << ',' << (rnk + 1) << ',' << h.iid << ','
          << h.source_id << ',' << h.distance << ',' << (correct ? 1 : 0) << '\n';
    }
  }
  sim.save();

  if (!opt.csv.empty()) {
    std::ofstream out(opt.csv);
    require(out.good(), ErrorKind::io, "cannot write " + opt.csv);
    out << csv.str();
  } else {
    std::cout << csv.str();
  }
  std::cout << "mean_precision@" << opt.top << " = " << (sum_pm / double(n_queries))
            << " over " << n_queries << " queries, " << opt.sources << " source(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"JPEG-domain multi-source encrypted image retrieval toolkit"};
  app.require_subcommand(1);

  std::string workspace = "workspace";
  app.add_option("-w,--workspace", workspace, "workspace directory")->envname("JESMSIR_WS");

  // init
  auto* init = app.add_subcommand("init", "create a workspace");
  std::string config_path;
  uint64_t seed = 1;
  bool seed_set = false;
  init->add_option("--config", config_path, "config JSON to copy");
  init->add_option("--seed", seed, "run seed")->each([&](const std::string&) { seed_set = true; });

  // owner add
  auto* owner_cmd = app.add_subcommand("owner", "owner management");
  auto* owner_add = owner_cmd->add_subcommand("add", "register an image owner");
  std::string oid;
  owner_add->add_option("oid", oid, "owner id")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "encrypt and outsource a directory of JPEGs");
  std::string ingest_dir, ingest_owner;
  ingest->add_option("dir", ingest_dir, "directory (recursed)")->required();
  ingest->add_option("--owner", ingest_owner, "owner id")->required();

  // authorize
  auto* auth = app.add_subcommand("authorize", "owner grants a user retrieval access");
  std::string auth_oid, auth_uid;
  auth->add_option("oid", auth_oid)->required();
  auth->add_option("uid", auth_uid)->required();

  // group create|join|leave|authorize
  auto* group = app.add_subcommand("group", "group lifecycle");
  auto* gcreate = group->add_subcommand("create", "create a group");
  auto* gjoin = group->add_subcommand("join", "owner joins a group");
  auto* gleave = group->add_subcommand("leave", "owner leaves a group");
  auto* gauth = group->add_subcommand("authorize", "group organizer grants a user");
  std::string gid, g_oid, g_uid;
  gcreate->add_option("gid", gid)->required();
  gjoin->add_option("gid", gid)->required();
  gjoin->add_option("oid", g_oid)->required();
  gleave->add_option("gid", gid)->required();
  gleave->add_option("oid", g_oid)->required();
  gauth->add_option("gid", gid)->required();
  gauth->add_option("uid", g_uid)->required();

  // query
  auto* query = app.add_subcommand("query", "encrypted retrieval as an authorized user");
  std::string q_uid, q_image, q_out;
  std::vector<std::string> q_sources;
  size_t q_top = 10;
  query->add_option("uid", q_uid)->required();
  query->add_option("image", q_image, "query JPEG")->required();
  query->add_option("--sources", q_sources, "source ids (owners/groups); default: all granted")
      ->delimiter(',');
  query->add_option("--top", q_top, "result count");
  query->add_option("--out", q_out, "directory for decrypted results");

  // image add|delete
  auto* image = app.add_subcommand("image", "single-image updates");
  auto* iadd = image->add_subcommand("add", "add one image");
  auto* idel = image->add_subcommand("delete", "delete one image");
  std::string i_oid, i_file, i_iid;
  iadd->add_option("oid", i_oid)->required();
  iadd->add_option("file", i_file)->required();
  idel->add_option("oid", i_oid)->required();
  idel->add_option("iid", i_iid)->required();

  // eval precision
  auto* eval = app.add_subcommand("eval", "evaluation harness");
  auto* eprec = eval->add_subcommand("precision", "P_m over a labeled corpus");
  EvalOptions eopt;
  eprec->add_option("--corpus", eopt.corpus, "directory-per-category corpus")->required();
  eprec->add_option("--sources", eopt.sources, "synthetic owner count");
  eprec->add_option("--kg", eopt.kg, "override shared k_g (Y gets kg, U/V kg/4)");
  eprec->add_option("--top", eopt.top, "m for P_m");
  eprec->add_option("--queries", eopt.queries, "query count cap (0 = all)");
  eprec->add_option("--csv", eopt.csv, "CSV output path (stdout if omitted)");

  // report security
  auto* report = app.add_subcommand("report", "reports");
  auto* rsec = report->add_subcommand("security", "per-image security strength + KBA statistics");

  CLI11_PARSE(app, argc, argv);

  try {
    fs::path ws(workspace);
    if (init->parsed()) {
      SystemConfig cfg;
      if (!config_path.empty()) cfg = SystemConfig::load(config_path);
      if (seed_set || config_path.empty()) cfg.seed = seed;
      Simulator::init_workspace(ws, cfg);
      std::cout << "initialized " << ws.string() << "\n";
      return 0;
    }

    if (owner_add->parsed()) {
      Simulator sim = Simulator::load(ws);
      sim.add_owner(oid);
      sim.save();
      std::cout << "owner " << oid << " registered\n";
      return 0;
    }

    if (ingest->parsed()) {
      Simulator sim = Simulator::load(ws);
      if (!sim.has_owner(ingest_owner)) sim.add_owner(ingest_owner);
      auto files = jpeg_files_under(ingest_dir);
      require(!files.empty(), ErrorKind::io, "no JPEG files under " + ingest_dir);
      std::vector<std::vector<uint8_t>> batch;
      batch.reserve(files.size());
      for (const auto& f : files) batch.push_back(read_file(f));
      auto iids = sim.flow_outsource(ingest_owner, batch);
      sim.save();
      for (size_t i = 0; i < files.size(); ++i)
        std::cout << iids[i] << "  " << files[i].string() << "\n";
      std::cout << iids.size() << " image(s) outsourced to " << ingest_owner << "\n";
      return 0;
    }

    if (auth->parsed()) {
      Simulator sim = Simulator::load(ws);
      if (!sim.has_user(auth_uid)) sim.add_user(auth_uid);
      sim.flow_authorize(auth_oid, auth_uid);
      sim.save();
      std::cout << "user " << auth_uid << " authorized by " << auth_oid << "\n";
      return 0;
    }

    if (gcreate->parsed() || gjoin->parsed() || gleave->parsed() || gauth->parsed()) {
      Simulator sim = Simulator::load(ws);
      if (gcreate->parsed()) {
        sim.flow_group_create(gid);
        std::cout << "group " << gid << " created\n";
      } else if (gjoin->parsed()) {
        sim.flow_group_join(gid, g_oid);
        std::cout << g_oid << " joined " << gid << "\n";
      } else if (gleave->parsed()) {
        sim.flow_group_leave(gid, g_oid);
        std::cout << g_oid << " left " << gid << "\n";
      } else {
        if (!sim.has_user(g_uid)) sim.add_user(g_uid);
        sim.flow_group_authorize(gid, g_uid);
        std::cout << "user " << g_uid << " authorized by group " << gid << "\n";
      }
      sim.save();
      return 0;
    }

    if (query->parsed()) {
      Simulator sim = Simulator::load(ws);
      if (q_sources.empty()) {
        const UserState& u = sim.user(q_uid);
        for (const auto& [src, _] : u.owner_val_keys) q_sources.push_back(src);
        for (const auto& [src, _] : u.group_val_keys) q_sources.push_back(src);
      }
      auto outcome = sim.flow_query(q_uid, read_file(q_image), q_sources, q_top);
      sim.save();
      std::cout << "rank  iid                 source      distance\n";
      for (size_t i = 0; i < outcome.result.hits.size(); ++i) {
        const auto& h = outcome.result.hits[i];
        std::cout << std::left << std::setw(6) << (i + 1) << std::setw(20) << h.iid
                  << std::setw(12) << h.source_id << h.distance << "\n";
      }
      if (!q_out.empty()) {
        for (const auto& item : outcome.items)
          write_file(fs::path(q_out) / (item.iid + ".jpg"), item.plaintext_jpeg);
        std::cout << outcome.items.size() << " decrypted result(s) written to " << q_out << "\n";
      }
      std::cout << "rounds cs-kmc=" << outcome.rounds.cs_kmc << " cs-user=" << outcome.rounds.cs_user
                << " kmc-user=" << outcome.rounds.kmc_user << "\n";
      return 0;
    }

    if (iadd->parsed()) {
      Simulator sim = Simulator::load(ws);
      std::string iid = sim.flow_image_add(i_oid, read_file(i_file));
      sim.save();
      std::cout << "added " << iid << "\n";
      return 0;
    }
    if (idel->parsed()) {
      Simulator sim = Simulator::load(ws);
      sim.flow_image_delete(i_oid, i_iid);
      sim.save();
      std::cout << "deleted " << i_iid << "\n";
      return 0;
    }

    if (eprec->parsed()) return run_eval(ws, eopt);

    if (rsec->parsed()) {
      Simulator sim = Simulator::load(ws);
      SecurityReport rep = sim.security_report();
      sim.save();
      std::cout << rep.to_json();
      return 0;
    }
  } catch (const Error& e) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(e.kind()));
    j["message"] = e.what();
    std::cerr << "error: " << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json j;
    j["kind"] = "internal";
    j["message"] = e.what();
    std::cerr << "error: " << j.dump() << "\n";
    return 2;
  }
  return 0;
}
