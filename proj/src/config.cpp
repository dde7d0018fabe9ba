#include "jes/config.hpp"

#include <fstream>
#include <json.hpp>

#include "jes/error.hpp"

namespace jes {

std::string SystemConfig::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["n_pmt1"] = n_pmt1;
  j["n_pmt2"] = n_pmt2;
  j["k_owner"] = k_owner;
  j["k_global"] = k_global;
  j["weights"] = {weights.dc, weights.y, weights.u, weights.v};
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

SystemConfig SystemConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("config parse: ") + e.what());
  }
  SystemConfig c;
  try {
    c.version = j.value("version", 1);
    require(c.version == 1, ErrorKind::config, "unsupported config version");
    c.n_pmt1 = j.value("n_pmt1", 5);
    c.n_pmt2 = j.value("n_pmt2", 5);
    require(c.n_pmt1 >= 1 && c.n_pmt2 >= 1, ErrorKind::config, "table counts must be >= 1");
    if (j.contains("k_owner")) c.k_owner = j["k_owner"].get<std::array<int, 3>>();
    if (j.contains("k_global")) c.k_global = j["k_global"].get<std::array<int, 3>>();
    if (j.contains("weights")) {
      auto w = j["weights"].get<std::array<double, 4>>();
      c.weights = DistanceWeights{w[0], w[1], w[2], w[3]};
    }
    c.seed = j.value("seed", uint64_t(1));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("config fields: ") + e.what());
  }
  return c;
}

SystemConfig SystemConfig::load(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorKind::io, "cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void SystemConfig::save(const std::string& path) const {
  std::ofstream f(path);
  require(f.good(), ErrorKind::io, "cannot write config: " + path);
  f << to_json();
}

}  // namespace jes
