#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usqm/features.hpp"
#include "usqm/gmm.hpp"
#include "usqm/image.hpp"
#include "usqm/pca.hpp"

namespace usqm {

inline constexpr const char* kBankVersion = "usqm-bank/1";
inline constexpr double kWorstFraction = 0.15;

/// Shared PCA basis plus one clean-manifold GMM per organ.
struct OrganModelBank {
  std::string version = kBankVersion;
  std::string fingerprint;  // of the extractor the bank was fit with
  LayerSet layers;
  std::size_t tile_size = kTileSize;
  std::size_t stride = kTileStride;
  std::string config_hash;
  std::int64_t created = 0;  // unix seconds; 0 unless SOURCE_DATE_EPOCH is set
  PcaModel pca;
  std::map<std::string, DiagGmm> organs;  // iteration order = declared order

  std::size_t organ_count() const noexcept { return organs.size(); }
};

/// Throws CorruptModel describing the first broken invariant.
void validate_bank(const OrganModelBank& bank);

struct LabeledImage {
  GrayImage image;
  std::string organ;
  std::string source;  // for reports only
};

struct BankFitConfig {
  LayerSet layers = default_layers();
  std::size_t pca_dim = 128;
  std::size_t components = 4;
  std::uint64_t seed = 0;
  std::size_t tile_size = kTileSize;
  std::size_t stride = kTileStride;
  GmmOptions gmm;
};

struct OrganFitReport {
  std::string organ;
  std::size_t images = 0;
  std::size_t patches = 0;
  bool excluded = false;
  std::string reason;
  int em_iterations = 0;
  bool converged = false;
  double final_log_likelihood = 0.0;
  int reseeds = 0;
};

struct BankFitResult {
  OrganModelBank bank;
  std::vector<OrganFitReport> organs;  // sorted by organ name
  std::size_t pooled_patches = 0;
};

/// Tiles every image, pools descriptors of all organs into one PCA, then fits
/// one GMM per organ. Organs with fewer than K patches are excluded and
/// reported. Parameters are rounded to float32 so the bank round-trips
/// bit-exactly through the bank file.
/// Throws InsufficientData when no organ survives or the pool is too small.
BankFitResult fit_bank(const std::vector<LabeledImage>& images,
                       const FeatureExtractor& extractor, const BankFitConfig& config);

/// kappa = max(1, round(fraction * n)), rounding half away from zero.
std::size_t worst_count(std::size_t patches, double fraction = kWorstFraction);

struct WorstAggregate {
  std::vector<std::size_t> indices;  // ascending by (score, index)
  double mean = 0.0;
};

/// Mean of the kappa lowest scores; ties resolved towards the lower index.
WorstAggregate aggregate_worst(const std::vector<double>& scores, std::size_t kappa);

enum class FingerprintPolicy { Error, Warn };

struct NrqConfig {
  double worst_fraction = kWorstFraction;
  FingerprintPolicy fingerprint_policy = FingerprintPolicy::Error;
};

struct NrqResult {
  std::vector<double> patch_scores;
  std::vector<TileOrigin> origins;
  std::vector<std::size_t> worst;
  std::size_t kappa = 0;
  double score = 0.0;
  std::string organ;  // empty when the uniform organ mixture was used
  bool upscaled = false;
  std::size_t height = 0;  // dimensions the tiles were taken from
  std::size_t width = 0;
};

/// log p_o(z) for a named organ, or log((1/O) sum_o p_o(z)) when organ is empty.
double patch_log_likelihood(const OrganModelBank& bank, const Eigen::VectorXd& projected,
                            const std::optional<std::string>& organ);

NrqResult nrq_score(const GrayImage& image, const OrganModelBank& bank,
                    const std::optional<std::string>& organ,
                    const FeatureExtractor& extractor, const NrqConfig& config = {});

/// Descriptors of all tiles of an image (after the minimum-size upscale).
struct TileDescriptors {
  TileGrid grid;
  Eigen::MatrixXd descriptors;  // one row per tile
  bool upscaled = false;
  std::size_t height = 0;
  std::size_t width = 0;
};
TileDescriptors tile_descriptors(const GrayImage& image, const FeatureExtractor& extractor,
                                 const LayerSet& layers, std::size_t tile_size = kTileSize,
                                 std::size_t stride = kTileStride);

}  // namespace usqm
