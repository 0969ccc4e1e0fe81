#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "usqm/image.hpp"

namespace usqm {

/// Row-major token matrix: one row per spatial token, one column per channel.
using TokenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Zero-based encoder block indices, ascending and unique.
class LayerSet {
 public:
  LayerSet() = default;
  LayerSet(std::initializer_list<int> layers) : LayerSet(std::vector<int>(layers)) {}
  explicit LayerSet(std::vector<int> layers);

  const std::vector<int>& indices() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }
  int max() const { return layers_.back(); }
  std::string to_string() const;  // "3,5,7,11"

  friend bool operator==(const LayerSet&, const LayerSet&) = default;

 private:
  std::vector<int> layers_;
};

LayerSet parse_layer_set(const std::string& csv);

inline const LayerSet& default_layers() {
  static const LayerSet layers{3, 5, 7, 11};
  return layers;
}

struct ExtractorProfile {
  int num_layers = 12;
  std::size_t grid_side = 14;  // tokens per axis
  std::vector<std::size_t> channels_per_layer = std::vector<std::size_t>(12, 64);
  bool has_class_token = true;

  std::size_t tokens() const noexcept { return grid_side * grid_side; }
};

/// Class-token-free patch tokens for a set of layers of one 224x224 tile.
struct TokenFeatures {
  std::vector<int> layers;
  std::vector<TokenMatrix> tokens;  // parallel to `layers`

  const TokenMatrix& at(int layer) const;
};

/// L2-normalized concatenation of per-layer token means.
struct GlobalDescriptor {
  Eigen::VectorXd values;
  std::vector<int> layers;
  bool degenerate = false;  // pre-normalization vector was exactly zero
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual const ExtractorProfile& profile() const noexcept = 0;
  /// Human-readable identity, e.g. "builtin-seeded:20240001".
  virtual std::string identity() const = 0;
  /// Stable hash of identity + profile; stored in model banks.
  virtual std::string fingerprint() const = 0;

  /// Throws Shape for non-224x224 input and Range for unknown layers.
  virtual TokenFeatures extract(const GrayImage& tile, const LayerSet& layers) const = 0;

 protected:
  void validate(const GrayImage& tile, const LayerSet& layers) const;
};

inline constexpr std::uint64_t kDefaultExtractorSeed = 20240001;

/// 12-block pre-norm ViT (16x16 patches, width 64, 4 heads, GELU MLP x4,
/// class token, learned positions) with weights from a seeded generator.
class BuiltinExtractor final : public FeatureExtractor {
 public:
  explicit BuiltinExtractor(std::uint64_t seed = kDefaultExtractorSeed);
  ~BuiltinExtractor() override;

  const ExtractorProfile& profile() const noexcept override { return profile_; }
  std::string identity() const override;
  std::string fingerprint() const override;
  TokenFeatures extract(const GrayImage& tile, const LayerSet& layers) const override;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  struct Weights;
  std::uint64_t seed_;
  ExtractorProfile profile_;
  std::unique_ptr<const Weights> weights_;
};

/// Serves precomputed tokens keyed by tile_key() of each 224x224 tile.
class ExternalExtractor final : public FeatureExtractor {
 public:
  static ExternalExtractor load(const std::string& path);

  const ExtractorProfile& profile() const noexcept override { return profile_; }
  std::string identity() const override;
  std::string fingerprint() const override;
  TokenFeatures extract(const GrayImage& tile, const LayerSet& layers) const override;

  std::size_t size() const noexcept { return records_.size(); }

 private:
  ExternalExtractor() = default;
  std::string path_;
  std::string content_hash_;
  ExtractorProfile profile_;
  std::map<std::string, TokenFeatures> records_;
};

/// Lookup key for external features: hash of the tile's 8-bit quantized pixels.
std::string tile_key(const GrayImage& tile);

/// Parses "builtin-seeded[:SEED]" or "external:PATH".
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

GlobalDescriptor global_descriptor(const FeatureExtractor& extractor, const GrayImage& tile,
                                   const LayerSet& layers);
GlobalDescriptor pool_descriptor(const TokenFeatures& features);

}  // namespace usqm
