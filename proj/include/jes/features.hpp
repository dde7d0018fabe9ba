#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "jes/coeff_image.hpp"

namespace jes {

// 30 counts: per component, bin j = number of blocks whose encrypted DC
// length equals j (j in 0..9; longer codes are uncounted).
struct DcFeature {
  std::array<uint64_t, 30> bins{};

  bool operator==(const DcFeature&) const = default;
};

// 40-dim per-block descriptor: Hist_s (pair count, mean r, population std of
// r) ‖ Hist_v (21 bins for v in [-10,10], then >10 and <-10) ‖ Hist_r (14
// largest r descending, padded with -1).
using LocalAcHist = std::array<double, 40>;
inline constexpr int kHistDim = 40;
inline constexpr int kHistVOffset = 3;
inline constexpr int kHistROffset = 26;

struct Vocabulary {
  std::string scope;     // owner id, group id, or the global-k_g tag
  int k = 0;
  uint64_t n_images = 0;                  // documents behind the idf weights
  std::vector<std::array<double, kHistDim>> centroids;
  std::vector<double> idf;                // log(N/(1+df)) clamped at 0

  bool operator==(const Vocabulary&) const = default;
};

// Aggregated per-image feature: normalized DC bins plus tf-idf BOW vectors
// per component.
struct BowFeature {
  std::array<double, 30> f_dc{};
  std::array<std::vector<double>, 3> f;  // f^Y, f^U, f^V

  bool operator==(const BowFeature&) const = default;
};

struct DistanceWeights {
  double dc = 0.1;
  double y = 0.5;
  double u = 0.2;
  double v = 0.2;
};

DcFeature extract_dc_feature(const CoeffImage& img);
LocalAcHist local_ac_hist(const Block& b);
std::array<std::vector<LocalAcHist>, 3> extract_local_hists(const CoeffImage& img);

// Seeded k-means (k-means++ init, 100 iterations, relative tolerance 1e-6,
// empty clusters reseeded from the farthest point). Corpus is grouped per
// image so document frequencies are well-defined.
Vocabulary build_vocabulary(const std::vector<std::vector<LocalAcHist>>& per_image, int k,
                            uint64_t seed, const std::string& scope);

// Nearest-centroid index for one local histogram.
size_t nearest_word(const Vocabulary& vocab, const LocalAcHist& h);

// Scaled tf-idf, L1-normalized; falls back to plain tf when idf zeroes out.
std::vector<double> quantize(const std::vector<LocalAcHist>& img_hists, const Vocabulary& vocab);

// Full per-image feature under one scope's three vocabularies.
BowFeature make_bow_feature(const CoeffImage& img, const std::array<Vocabulary, 3>& vocabs);

double distance(const BowFeature& a, const BowFeature& b, const DistanceWeights& w = {});

// k-means objective (sum of squared distances to assigned centroids); test
// hook for the monotonicity oracle.
double kmeans_objective(const std::vector<LocalAcHist>& points, const Vocabulary& vocab);

std::vector<uint8_t> serialize_vocabulary(const Vocabulary& v);
Vocabulary deserialize_vocabulary(const std::vector<uint8_t>& bytes);

}  // namespace jes
