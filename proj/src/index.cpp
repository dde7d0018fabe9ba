#include "jes/index.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jes/error.hpp"
#include "jes/serial.hpp"

namespace jes {

std::string Scope::tag() const {
  switch (kind) {
    case Kind::owner: return "owner:" + id;
    case Kind::owner_global: return "global:" + id;
    case Kind::group: return "group:" + id;
    case Kind::group_global: return "gglobal:" + id;
  }
  return id;
}

void LinearIndex::add(IndexRow row) {
  require(!row.iid.empty(), ErrorKind::contract, "empty iid");
  require(rows_.find(row.iid) == rows_.end(), ErrorKind::duplicate,
          "iid already indexed: " + row.iid);
  rows_.emplace(row.iid, std::move(row));
}

void LinearIndex::remove(const std::string& iid) {
  auto it = rows_.find(iid);
  require(it != rows_.end(), ErrorKind::not_found, "iid not indexed: " + iid);
  rows_.erase(it);
}

IndexRow& LinearIndex::row(const std::string& iid) {
  auto it = rows_.find(iid);
  require(it != rows_.end(), ErrorKind::not_found, "iid not indexed: " + iid);
  return it->second;
}

namespace {

void sort_and_cut(std::vector<SearchHit>& hits, size_t m) {
  std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.iid < b.iid;
  });
  if (hits.size() > m) hits.resize(m);
}

}  // namespace

SearchResult search_single(const LinearIndex& index, const BowFeature& query, const Scope& scope,
                           size_t m, const DistanceWeights& w) {
  std::string tag = scope.tag();
  bool scope_seen = false;
  SearchResult res;
  for (const auto& [iid, row] : index.rows()) {
    auto it = row.features.find(tag);
    if (it == row.features.end()) continue;
    scope_seen = true;
    res.hits.push_back(SearchHit{iid, scope.id, distance(query, it->second, w)});
  }
  require(scope_seen, ErrorKind::contract, "unknown scope: " + tag);
  sort_and_cut(res.hits, m);
  return res;
}

SearchResult search_multi(const LinearIndex& index, const std::vector<SourceQuery>& sources,
                          size_t m, const DistanceWeights& w) {
  require(!sources.empty(), ErrorKind::contract, "empty source list");
  // Comparability guard: one shared k_g across every source.
  std::array<size_t, 3> dims{sources[0].feature.f[0].size(), sources[0].feature.f[1].size(),
                             sources[0].feature.f[2].size()};
  for (const auto& s : sources) {
    require(s.scope.kind == Scope::Kind::owner_global || s.scope.kind == Scope::Kind::group_global,
            ErrorKind::contract, "multi-source search requires global-k scopes");
    for (int c = 0; c < 3; ++c)
      require(s.feature.f[c].size() == dims[size_t(c)], ErrorKind::contract,
              "sources use unequal k_g");
  }

  SearchResult res;
  for (const auto& s : sources) {
    SearchResult part = search_single(index, s.feature, s.scope, index.size(), w);
    res.hits.insert(res.hits.end(), part.hits.begin(), part.hits.end());
  }
  sort_and_cut(res.hits, m);
  return res;
}

int k_suggest(const std::vector<int>& k_sug, double ratio, int n_source) {
  require(!k_sug.empty(), ErrorKind::contract, "empty k_sug list");
  require(ratio > 0.0 && ratio <= 1.0, ErrorKind::contract, "ratio outside (0,1]");
  require(n_source >= 1, ErrorKind::contract, "n_source must be positive");
  double mean = 0;
  for (int k : k_sug) mean += k;
  mean /= double(k_sug.size());
  double v = mean * std::log2(1.0 + 1.0 / ratio) * std::log2(1.0 + double(n_source));
  int r = int(std::lround(v));
  return std::max(1, r);
}

double precision_at_m(const SearchResult& result,
                      const std::map<std::string, std::string>& category_by_iid,
                      const std::string& query_category, size_t m) {
  require(m >= 1, ErrorKind::contract, "m must be positive");
  size_t correct = 0;
  size_t n = std::min(m, result.hits.size());
  for (size_t i = 0; i < n; ++i) {
    auto it = category_by_iid.find(result.hits[i].iid);
    if (it != category_by_iid.end() && it->second == query_category) ++correct;
  }
  return double(correct) / double(m);
}

int elbow_k_sug(size_t n_points) {
  if (n_points < 4) return 1;
  return std::max(2, int(std::lround(std::sqrt(double(n_points) / 2.0))));
}

// ---------------------------------------------------------------------------
// Container ("JESI").

namespace {
constexpr char kIndexMagic[4] = {'J', 'E', 'S', 'I'};
constexpr uint16_t kVersion = 1;

void put_bow(Writer& w, const BowFeature& f) {
  for (double v : f.f_dc) w.f64(v);
  for (int c = 0; c < 3; ++c) {
    w.u32(uint32_t(f.f[c].size()));
    for (double v : f.f[c]) w.f64(v);
  }
}

BowFeature get_bow(Reader& r) {
  BowFeature f;
  for (double& v : f.f_dc) v = r.f64();
  for (int c = 0; c < 3; ++c) {
    f.f[c].resize(r.u32());
    for (double& v : f.f[c]) v = r.f64();
  }
  return f;
}
}  // namespace

std::vector<uint8_t> LinearIndex::serialize() const {
  Writer w;
  put_magic(w, kIndexMagic, kVersion);
  w.u32(uint32_t(rows_.size()));
  for (const auto& [iid, row] : rows_) {
    w.str(iid);
    w.str(row.owner_id);
    w.u32(uint32_t(row.features.size()));
    for (const auto& [tag, f] : row.features) {
      w.str(tag);
      put_bow(w, f);
    }
  }
  return w.take();
}

LinearIndex LinearIndex::deserialize(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kIndexMagic, kVersion);
  LinearIndex idx;
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    IndexRow row;
    row.iid = r.str();
    row.owner_id = r.str();
    uint32_t nf = r.u32();
    for (uint32_t j = 0; j < nf; ++j) {
      std::string tag = r.str();
      row.features.emplace(std::move(tag), get_bow(r));
    }
    idx.rows_.emplace(row.iid, std::move(row));
  }
  return idx;
}

std::string LinearIndex::to_csv() const {
  std::ostringstream os;
  os << "iid,owner,scope,k_y,k_u,k_v\n";
  for (const auto& [iid, row] : rows_)
    for (const auto& [tag, f] : row.features)
      os << iid << ',' << row.owner_id << ',' << tag << ',' << f.f[0].size() << ','
         << f.f[1].size() << ',' << f.f[2].size() << '\n';
  return os.str();
}

}  // namespace jes
