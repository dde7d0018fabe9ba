#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jes/features.hpp"

namespace jes {

// Index column scopes (Table-2 layout): per-owner under the owner's own k,
// per-owner under the shared global k_g, and the two group analogues.
struct Scope {
  enum class Kind { owner, owner_global, group, group_global };
  Kind kind = Kind::owner;
  std::string id;  // owner id or group id

  std::string tag() const;
  static Scope owner(std::string id) { return {Kind::owner, std::move(id)}; }
  static Scope owner_global(std::string id) { return {Kind::owner_global, std::move(id)}; }
  static Scope group(std::string id) { return {Kind::group, std::move(id)}; }
  static Scope group_global(std::string id) { return {Kind::group_global, std::move(id)}; }

  auto operator<=>(const Scope&) const = default;
};

struct IndexRow {
  std::string iid;
  std::string owner_id;
  std::map<std::string, BowFeature> features;  // keyed by Scope::tag()

  bool operator==(const IndexRow&) const = default;
};

struct SearchHit {
  std::string iid;
  std::string source_id;  // owner or group the hit was scored under
  double distance = 0;
};

struct SearchResult {
  std::vector<SearchHit> hits;  // non-decreasing distance, ties by iid
};

class LinearIndex {
 public:
  void add(IndexRow row);
  void remove(const std::string& iid);
  bool contains(const std::string& iid) const { return rows_.count(iid) != 0; }
  size_t size() const { return rows_.size(); }
  const std::map<std::string, IndexRow>& rows() const { return rows_; }
  std::map<std::string, IndexRow>& rows_mut() { return rows_; }
  IndexRow& row(const std::string& iid);
  void clear() { rows_.clear(); }

  std::vector<uint8_t> serialize() const;
  static LinearIndex deserialize(const std::vector<uint8_t>& bytes);
  std::string to_csv() const;  // iid, owner, scope, dims

 private:
  std::map<std::string, IndexRow> rows_;  // sorted by iid
};

// Exact linear scan under Eq.(9); deterministic (distance, iid) tie-break.
SearchResult search_single(const LinearIndex& index, const BowFeature& query, const Scope& scope,
                           size_t m, const DistanceWeights& w = {});

// Multi-source merge: per-source trapdoor features under the sources'
// global-k_g scopes, one merged ranking. Refuses scopes of unequal k.
struct SourceQuery {
  Scope scope;  // owner_global or group_global
  BowFeature feature;
};
SearchResult search_multi(const LinearIndex& index, const std::vector<SourceQuery>& sources,
                          size_t m, const DistanceWeights& w = {});

// k_suggest = mean(k_sug) · log2(1 + 1/ratio) · log2(1 + n_source).
int k_suggest(const std::vector<int>& k_sug, double ratio, int n_source);

// P_m = m'/m over the top-m hits sharing the query's category.
double precision_at_m(const SearchResult& result,
                      const std::map<std::string, std::string>& category_by_iid,
                      const std::string& query_category, size_t m);

// Convenience elbow heuristic for per-owner k_sug (not part of acceptance).
int elbow_k_sug(size_t n_points);

}  // namespace jes
