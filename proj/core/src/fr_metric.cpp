#include "usqm/fr_metric.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "usqm/errors.hpp"
#include "usqm/log.hpp"

namespace usqm {
namespace {

void require_same_shape(const TokenMatrix& a, const TokenMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::Shape, std::string(what) + ": token matrices differ in shape (" +
                               std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                               " vs " + std::to_string(b.rows()) + "x" +
                               std::to_string(b.cols()) + ")");
  }
}

// Row-wise softmax of an m x m block, in place.
void softmax_rows(Eigen::MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
    assert(std::abs(s.row(r).sum() - 1.0) < 1e-9);
  }
}

std::pair<GrayImage, GrayImage> prepare_pair(const GrayImage& a, const GrayImage& b,
                                             bool& upscaled) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::Shape, "image pair differs in shape (" + std::to_string(a.height()) + "x" +
                               std::to_string(a.width()) + " vs " +
                               std::to_string(b.height()) + "x" + std::to_string(b.width()) +
                               ")");
  }
  auto [ua, ra] = ensure_min_side(a);
  auto [ub, rb] = ensure_min_side(b);
  upscaled = ra || rb;
  return {std::move(ua), std::move(ub)};
}

}  // namespace

void FrConfig::validate(const ExtractorProfile& profile) const {
  if (radius < 0) fail(ErrorKind::Range, "neighborhood radius must be >= 0");
  if (!(temperature > 0.0)) fail(ErrorKind::Range, "temperature must be > 0");
  if (loss_stride == 0) fail(ErrorKind::Range, "loss window stride must be > 0");
  if (layers.empty()) fail(ErrorKind::Range, "layer set is empty");
  for (int l : layers.indices()) {
    if (l < 0 || l >= profile.num_layers) {
      fail(ErrorKind::Range, "layer " + std::to_string(l) + " invalid for a " +
                                 std::to_string(profile.num_layers) + "-layer extractor");
    }
  }
}

TokenMatrix normalize_rows(const TokenMatrix& tokens) {
  TokenMatrix out = tokens;
  std::size_t zero_rows = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) {
      out.row(r) /= n;
    } else {
      ++zero_rows;
    }
  }
  if (zero_rows > 0) log_debug(std::to_string(zero_rows) + " all-zero token rows left unnormalized");
  return out;
}

std::vector<std::size_t> neighborhood(std::size_t q, std::size_t grid_side, int radius) {
  const long side = static_cast<long>(grid_side);
  const long qr = static_cast<long>(q) / side;
  const long qc = static_cast<long>(q) % side;
  const long r = radius;
  std::vector<std::size_t> out;
  for (long y = std::max(0L, qr - r); y <= std::min(side - 1, qr + r); ++y) {
    for (long x = std::max(0L, qc - r); x <= std::min(side - 1, qc + r); ++x) {
      out.push_back(static_cast<std::size_t>(y * side + x));
    }
  }
  return out;
}

double structural_distance(const TokenMatrix& fx, const TokenMatrix& fy, std::size_t grid_side,
                           int radius, double temperature) {
  require_same_shape(fx, fy, "structural_distance");
  if (static_cast<std::size_t>(fx.rows()) != grid_side * grid_side) {
    fail(ErrorKind::Shape, "structural_distance: token count " + std::to_string(fx.rows()) +
                               " is not grid_side^2 = " +
                               std::to_string(grid_side * grid_side));
  }
  if (radius < 0) fail(ErrorKind::Range, "neighborhood radius must be >= 0");
  const TokenMatrix nx = normalize_rows(fx);
  const TokenMatrix ny = normalize_rows(fy);
  // Every neighborhood similarity matrix is a sub-block of the full token Gram.
  const Eigen::MatrixXd gx = temperature * (nx * nx.transpose());
  const Eigen::MatrixXd gy = temperature * (ny * ny.transpose());

  const auto tokens = static_cast<std::size_t>(fx.rows());
  double total = 0.0;
  Eigen::MatrixXd sx, sy;
  for (std::size_t q = 0; q < tokens; ++q) {
    const auto idx = neighborhood(q, grid_side, radius);
    const auto m = static_cast<Eigen::Index>(idx.size());
    sx.resize(m, m);
    sy.resize(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        sx(i, j) = gx(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
        sy(i, j) = gy(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
      }
    }
    softmax_rows(sx);
    softmax_rows(sy);
    total += (sx - sy).cwiseAbs().sum() / static_cast<double>(m * m);
  }
  return total / static_cast<double>(tokens);
}

double gram_distance(const TokenMatrix& fx, const TokenMatrix& fy) {
  require_same_shape(fx, fy, "gram_distance");
  const TokenMatrix nx = normalize_rows(fx);
  const TokenMatrix ny = normalize_rows(fy);
  const double scale = 1.0 / static_cast<double>(fx.rows() * fx.cols());
  const Eigen::MatrixXd gx = scale * (nx.transpose() * nx);
  const Eigen::MatrixXd gy = scale * (ny.transpose() * ny);
  return (gx - gy).cwiseAbs().mean();
}

FrBreakdown ulpips_from_features(const TokenFeatures& fx, const TokenFeatures& fy,
                                 const FrConfig& config, std::size_t grid_side) {
  FrBreakdown out;
  double sum = 0.0;
  for (int l : config.layers.indices()) {
    LayerDistance ld;
    ld.layer = l;
    ld.structural = structural_distance(fx.at(l), fy.at(l), grid_side, config.radius,
                                        config.temperature);
    ld.gram = gram_distance(fx.at(l), fy.at(l));
    sum += ld.total();
    out.layers.push_back(ld);
  }
  out.score = sum / static_cast<double>(config.layers.size());
  return out;
}

FrBreakdown ulpips(const GrayImage& reference, const GrayImage& test, const FrConfig& config,
                   const FeatureExtractor& extractor) {
  config.validate(extractor.profile());
  if (!reference.same_shape(test)) fail(ErrorKind::Shape, "ulpips: image shapes differ");
  const auto fx = extractor.extract(reference, config.layers);
  const auto fy = extractor.extract(test, config.layers);
  return ulpips_from_features(fx, fy, config, extractor.profile().grid_side);
}

TiledFrResult ulpips_tiled(const GrayImage& reference, const GrayImage& test,
                           const FrConfig& config, const FeatureExtractor& extractor) {
  config.validate(extractor.profile());
  TiledFrResult res;
  auto [a, b] = prepare_pair(reference, test, res.upscaled);
  const TileGrid grid = tile(a, kTileSize, kTileStride);
  res.windows = grid.count();
  for (const auto& o : grid.origins) {
    const auto part = ulpips(crop(a, o, kTileSize, kTileSize), crop(b, o, kTileSize, kTileSize),
                             config, extractor);
    if (res.breakdown.layers.empty()) {
      res.breakdown = part;
      continue;
    }
    for (std::size_t i = 0; i < part.layers.size(); ++i) {
      res.breakdown.layers[i].structural += part.layers[i].structural;
      res.breakdown.layers[i].gram += part.layers[i].gram;
    }
    res.breakdown.score += part.score;
  }
  if (res.windows > 1) {
    const double n = static_cast<double>(res.windows);
    for (auto& l : res.breakdown.layers) {
      l.structural /= n;
      l.gram /= n;
    }
    res.breakdown.score /= n;
  }
  return res;
}

TokenLossResult token_loss(const GrayImage& reconstruction, const GrayImage& target,
                           const FrConfig& config, const FeatureExtractor& extractor) {
  config.validate(extractor.profile());
  TokenLossResult res;
  auto [a, b] = prepare_pair(reconstruction, target, res.upscaled);
  const TileGrid grid = tile(a, kTileSize, config.loss_stride);
  res.windows = grid.count();
  double total = 0.0;
  for (const auto& o : grid.origins) {
    const auto fa = extractor.extract(crop(a, o, kTileSize, kTileSize), config.layers);
    const auto fb = extractor.extract(crop(b, o, kTileSize, kTileSize), config.layers);
    double per_window = 0.0;
    for (int l : config.layers.indices()) {
      const TokenMatrix na = normalize_rows(fa.at(l));
      const TokenMatrix nb = normalize_rows(fb.at(l));
      per_window += (na - nb).rowwise().squaredNorm().mean();
    }
    total += per_window / static_cast<double>(config.layers.size());
  }
  res.value = total / static_cast<double>(res.windows);
  return res;
}

}  // namespace usqm
