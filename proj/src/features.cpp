#include "jes/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "jes/error.hpp"
#include "jes/image_cipher.hpp"
#include "jes/serial.hpp"

namespace jes {

DcFeature extract_dc_feature(const CoeffImage& img) {
  DcFeature f;
  for (int c = 0; c < 3; ++c)
    for (const Block& b : img.comps[c].blocks)
      if (b.dc.group <= 9) ++f.bins[size_t(10 * c + b.dc.group)];
  return f;
}

LocalAcHist local_ac_hist(const Block& b) {
  LocalAcHist h{};
  size_t n = b.pairs.size();
  h[0] = double(n);
  if (n > 0) {
    double sum = 0;
    for (const RvPair& p : b.pairs) sum += p.run;
    double mean = sum / double(n);
    double var = 0;
    for (const RvPair& p : b.pairs) var += (p.run - mean) * (p.run - mean);
    h[1] = mean;
    h[2] = std::sqrt(var / double(n));
  }
  for (const RvPair& p : b.pairs) {
    if (p.value > 10)
      h[kHistVOffset + 21] += 1;
    else if (p.value < -10)
      h[kHistVOffset + 22] += 1;
    else
      h[size_t(kHistVOffset + p.value + 10)] += 1;
  }
  std::vector<double> runs;
  runs.reserve(n);
  for (const RvPair& p : b.pairs) runs.push_back(double(p.run));
  std::sort(runs.begin(), runs.end(), std::greater<>());
  for (int i = 0; i < 14; ++i) h[size_t(kHistROffset + i)] = i < int(runs.size()) ? runs[size_t(i)] : -1.0;
  return h;
}

std::array<std::vector<LocalAcHist>, 3> extract_local_hists(const CoeffImage& img) {
  std::array<std::vector<LocalAcHist>, 3> out;
  for (int c = 0; c < 3; ++c) {
    out[c].reserve(img.comps[c].blocks.size());
    for (const Block& b : img.comps[c].blocks) out[c].push_back(local_ac_hist(b));
  }
  return out;
}

namespace {

double sq_dist(const LocalAcHist& a, const LocalAcHist& b) {
  double s = 0;
  for (int i = 0; i < kHistDim; ++i) {
    double d = a[size_t(i)] - b[size_t(i)];
    s += d * d;
  }
  return s;
}

// Portable bounded draw (uniform_int_distribution varies across stdlibs).
uint64_t bounded(std::mt19937_64& rng, uint64_t n) {
  if (n <= 1) return 0;
  uint64_t mask = ~uint64_t(0) >> std::countl_zero(n - 1);
  for (;;) {
    uint64_t v = rng() & mask;
    if (v < n) return v;
  }
}

double unit_real(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;  // [0,1)
}

}  // namespace

Vocabulary build_vocabulary(const std::vector<std::vector<LocalAcHist>>& per_image, int k,
                            uint64_t seed, const std::string& scope) {
  std::vector<LocalAcHist> points;
  for (const auto& img : per_image) points.insert(points.end(), img.begin(), img.end());
  require(k >= 1, ErrorKind::contract, "k must be positive");
  require(points.size() >= size_t(k), ErrorKind::contract, "corpus smaller than k");

  Vocabulary vocab;
  vocab.scope = scope;
  vocab.k = k;
  vocab.n_images = per_image.size();

  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  std::vector<std::array<double, kHistDim>> centroids;
  centroids.push_back(points[bounded(rng, points.size())]);
  std::vector<double> d2(points.size());
  while (int(centroids.size()) < k) {
    double total = 0;
    for (size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    size_t pick = 0;
    if (total > 0) {
      double target = unit_real(rng) * total;
      double acc = 0;
      for (size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = bounded(rng, points.size());
    }
    centroids.push_back(points[pick]);
  }

  std::vector<size_t> assign(points.size(), 0);
  double prev_obj = std::numeric_limits<double>::max();
  for (int iter = 0; iter < 100; ++iter) {
    double obj = 0;
    for (size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      size_t bi = 0;
      for (size_t c = 0; c < centroids.size(); ++c) {
        double d = sq_dist(points[i], centroids[c]);
        if (d < best) {
          best = d;
          bi = c;
        }
      }
      assign[i] = bi;
      obj += best;
    }

    std::vector<std::array<double, kHistDim>> sums(static_cast<size_t>(k));
    for (auto& s : sums) s.fill(0.0);
    std::vector<size_t> counts(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < points.size(); ++i) {
      for (int d = 0; d < kHistDim; ++d) sums[assign[i]][size_t(d)] += points[i][size_t(d)];
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[size_t(c)] == 0) {
        // Reseed an empty cluster from the point farthest from its centroid.
        size_t far = 0;
        double far_d = -1;
        for (size_t i = 0; i < points.size(); ++i) {
          double d = sq_dist(points[i], centroids[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids[size_t(c)] = points[far];
        assign[far] = size_t(c);
      } else {
        for (int d = 0; d < kHistDim; ++d)
          centroids[size_t(c)][size_t(d)] = sums[size_t(c)][size_t(d)] / double(counts[size_t(c)]);
      }
    }

    if (prev_obj < std::numeric_limits<double>::max() &&
        std::abs(prev_obj - obj) <= 1e-6 * std::max(1.0, prev_obj))
      break;
    prev_obj = obj;
  }

  vocab.centroids = std::move(centroids);

  // Document frequencies over images.
  std::vector<uint64_t> df(size_t(k), 0);
  for (const auto& img : per_image) {
    std::vector<bool> seen(size_t(k), false);
    for (const auto& h : img) {
      size_t w = nearest_word(vocab, h);
      seen[w] = true;
    }
    for (int c = 0; c < k; ++c)
      if (seen[size_t(c)]) ++df[size_t(c)];
  }
  vocab.idf.resize(size_t(k));
  for (int c = 0; c < k; ++c) {
    double v = std::log(double(vocab.n_images) / (1.0 + double(df[size_t(c)])));
    vocab.idf[size_t(c)] = std::max(0.0, v);
  }
  return vocab;
}

size_t nearest_word(const Vocabulary& vocab, const LocalAcHist& h) {
  double best = std::numeric_limits<double>::max();
  size_t bi = 0;
  for (size_t c = 0; c < vocab.centroids.size(); ++c) {
    double d = sq_dist(h, vocab.centroids[c]);
    if (d < best) {
      best = d;
      bi = c;
    }
  }
  return bi;
}

std::vector<double> quantize(const std::vector<LocalAcHist>& img_hists, const Vocabulary& vocab) {
  std::vector<double> counts(size_t(vocab.k), 0.0);
  for (const auto& h : img_hists) ++counts[nearest_word(vocab, h)];
  if (img_hists.empty()) return counts;

  std::vector<double> f(size_t(vocab.k));
  double sum = 0;
  for (size_t i = 0; i < f.size(); ++i) {
    f[i] = counts[i] / double(img_hists.size()) * vocab.idf[i];
    sum += std::abs(f[i]);
  }
  if (sum == 0) {
    // Degenerate idf (every word in every document): fall back to tf.
    for (size_t i = 0; i < f.size(); ++i) {
      f[i] = counts[i] / double(img_hists.size());
      sum += f[i];
    }
  }
  if (sum > 0)
    for (double& v : f) v /= sum;
  return f;
}

BowFeature make_bow_feature(const CoeffImage& img, const std::array<Vocabulary, 3>& vocabs) {
  BowFeature bf;
  DcFeature dc = extract_dc_feature(img);
  for (int c = 0; c < 3; ++c) {
    double blknum = double(img.comps[c].blocks.size());
    for (int j = 0; j < 10; ++j)
      bf.f_dc[size_t(10 * c + j)] = blknum > 0 ? double(dc.bins[size_t(10 * c + j)]) / blknum : 0.0;
  }
  auto hists = extract_local_hists(img);
  for (int c = 0; c < 3; ++c) bf.f[c] = quantize(hists[c], vocabs[c]);
  return bf;
}

double distance(const BowFeature& a, const BowFeature& b, const DistanceWeights& w) {
  double d_dc = 0;
  for (int i = 0; i < 30; ++i) d_dc += std::abs(a.f_dc[size_t(i)] - b.f_dc[size_t(i)]);
  double d[3] = {0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    require(a.f[c].size() == b.f[c].size(), ErrorKind::contract, "feature dims differ");
    for (size_t i = 0; i < a.f[c].size(); ++i) d[c] += std::abs(a.f[c][i] - b.f[c][i]);
  }
  return w.dc * d_dc + w.y * d[0] + w.u * d[1] + w.v * d[2];
}

double kmeans_objective(const std::vector<LocalAcHist>& points, const Vocabulary& vocab) {
  double s = 0;
  for (const auto& p : points) s += sq_dist(p, vocab.centroids[nearest_word(vocab, p)]);
  return s;
}

namespace {
constexpr char kVocabMagic[4] = {'J', 'E', 'S', 'B'};
constexpr uint16_t kVersion = 1;
}  // namespace

std::vector<uint8_t> serialize_vocabulary(const Vocabulary& v) {
  Writer w;
  put_magic(w, kVocabMagic, kVersion);
  w.str(v.scope);
  w.u32(uint32_t(v.k));
  w.u64(v.n_images);
  for (const auto& c : v.centroids)
    for (double x : c) w.f64(x);
  for (double x : v.idf) w.f64(x);
  return w.take();
}

Vocabulary deserialize_vocabulary(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  expect_magic(r, kVocabMagic, kVersion);
  Vocabulary v;
  v.scope = r.str();
  v.k = int(r.u32());
  v.n_images = r.u64();
  v.centroids.resize(size_t(v.k));
  for (auto& c : v.centroids)
    for (double& x : c) x = r.f64();
  v.idf.resize(size_t(v.k));
  for (double& x : v.idf) x = r.f64();
  return v;
}

}  // namespace jes
