#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "jes/features.hpp"

namespace jes {

// System parameters shared by the CLI and the simulator. Versioned JSON on
// disk.
struct SystemConfig {
  int version = 1;
  int n_pmt1 = 5;
  int n_pmt2 = 5;
  std::array<int, 3> k_owner{24, 12, 12};  // per-component owner vocabularies
  std::array<int, 3> k_global{24, 12, 12};  // shared k_g
  DistanceWeights weights{};
  uint64_t seed = 1;

  std::string to_json() const;
  static SystemConfig from_json(const std::string& text);
  static SystemConfig load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace jes
