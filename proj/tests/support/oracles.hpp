#pragma once

// Straight-line reference implementations written from the formulas, used
// to cross-check the library. Nothing here calls into aifind's numerics.

#include <cstdint>
#include <random>
#include <vector>

#include "aifind/anchors.hpp"
#include "aifind/image.hpp"

namespace oracle {

using Plane = std::vector<std::vector<double>>;  // [y][x]

aifind::Image random_rgb(int w, int h, std::mt19937_64& rng);
aifind::Image random_gray(int w, int h, std::mt19937_64& rng);
/// Union of 1-3 random rectangles, never empty.
aifind::Mask random_mask(int w, int h, std::mt19937_64& rng);

Plane gray_plane(const aifind::Image& img);
double srgb_lightness(double r, double g, double b);

Plane laplacian(const Plane& p);
double blur(const aifind::Image& img, const aifind::Mask& m);
double color(const aifind::Image& img, const aifind::Mask& region, const aifind::Mask& skin);
double structure(const aifind::Image& img, const aifind::Mask& region, const aifind::Mask& skin);
double glcm_contrast(const aifind::Image& img, const aifind::Mask& m);
double sobel_mean(const aifind::Image& img, const aifind::Mask& m);

/// 3x3 correlation with clamp-to-edge indexing; k is [dy][dx].
Plane conv3(const Plane& p, const double k[3][3]);

/// Pair counting with ties worth 1/2.
double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels);

/// Exhaustive argmax of the summed support cosine; first index wins ties.
std::size_t best_candidate(const std::vector<aifind::TextCandidatePair>& cands, const aifind::SupportSet& support);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm(const std::vector<double>& a);

/// Multi-head attention by explicit loops. Weights are (in x out) matrices
/// stored row-major in flat vectors; biases have length D.
struct AttentionWeights {
  int d = 0;
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
};
std::vector<std::vector<double>> attention(const std::vector<std::vector<double>>& x,
                                           const std::vector<std::vector<double>>& s, const AttentionWeights& w,
                                           int heads);

double log_softmax_ce(double l0, double l1, int label);
double bce_mean(const std::vector<double>& logits, const std::vector<int>& y);

}  // namespace oracle
