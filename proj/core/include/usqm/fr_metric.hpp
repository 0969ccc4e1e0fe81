#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "usqm/features.hpp"
#include "usqm/image.hpp"

namespace usqm {

struct FrConfig {
  LayerSet layers = default_layers();
  int radius = 3;
  double temperature = 20.0;
  std::size_t loss_stride = kTileStride;

  void validate(const ExtractorProfile& profile) const;
};

struct LayerDistance {
  int layer = 0;
  double structural = 0.0;
  double gram = 0.0;
  double total() const noexcept { return structural + gram; }
};

struct FrBreakdown {
  std::vector<LayerDistance> layers;
  double score = 0.0;  // mean over layers of (structural + gram)
};

/// Rows scaled to unit L2 norm; all-zero rows are left at zero.
TokenMatrix normalize_rows(const TokenMatrix& tokens);

/// Row-major token indices within Chebyshev distance `radius` of token q on a
/// grid_side x grid_side grid, clipped at the border.
std::vector<std::size_t> neighborhood(std::size_t q, std::size_t grid_side, int radius);

/// Local token-relation distance: per token, compare row-softmaxed
/// temperature-scaled similarity matrices of its neighborhood by mean absolute
/// difference, then average over tokens.
double structural_distance(const TokenMatrix& fx, const TokenMatrix& fy,
                           std::size_t grid_side, int radius, double temperature);

/// Mean absolute difference of the channel Gram matrices F^T F / (T C) of the
/// row-normalized inputs.
double gram_distance(const TokenMatrix& fx, const TokenMatrix& fy);

/// Full-reference distance between two 224x224 images.
FrBreakdown ulpips(const GrayImage& reference, const GrayImage& test, const FrConfig& config,
                   const FeatureExtractor& extractor);

/// ulpips on features already extracted for both images.
FrBreakdown ulpips_from_features(const TokenFeatures& fx, const TokenFeatures& fy,
                                 const FrConfig& config, std::size_t grid_side);

struct TiledFrResult {
  FrBreakdown breakdown;  // per-layer terms and score averaged over windows
  std::size_t windows = 0;
  bool upscaled = false;
};

/// ulpips averaged over the shared 224-tile grid of two equally sized images
/// of any size (after the minimum-size upscale). Equals ulpips for 224x224.
TiledFrResult ulpips_tiled(const GrayImage& reference, const GrayImage& test,
                           const FrConfig& config, const FeatureExtractor& extractor);

/// Squared distance between normalized tokens, averaged over tokens, layers,
/// and sliding 224x224 windows.
struct TokenLossResult {
  double value = 0.0;
  std::size_t windows = 0;
  bool upscaled = false;
};
TokenLossResult token_loss(const GrayImage& reconstruction, const GrayImage& target,
                           const FrConfig& config, const FeatureExtractor& extractor);

}  // namespace usqm
