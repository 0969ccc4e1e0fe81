#include "usqm/nr_metric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include "usqm/errors.hpp"
#include "usqm/hashing.hpp"
#include "usqm/log.hpp"
#include "usqm/random.hpp"

namespace usqm {
namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double to_f32_at_least(double v, double floor) {
  float f = static_cast<float>(v);
  while (static_cast<double>(f) < floor) f = std::nextafter(f, 2.0f * f + 1.0f);
  return static_cast<double>(f);
}

template <typename M>
void round_f32(M& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = to_f32(m.data()[i]);
}

void canonicalize(OrganModelBank& bank) {
  round_f32(bank.pca.mean);
  round_f32(bank.pca.components);
  round_f32(bank.pca.variances);
  for (auto& [name, g] : bank.organs) {
    round_f32(g.weights);
    round_f32(g.means);
    for (Eigen::Index i = 0; i < g.variances.size(); ++i) {
      g.variances.data()[i] = to_f32_at_least(g.variances.data()[i], kVarianceFloor);
    }
  }
}

std::int64_t creation_time() {
  if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(s, &end, 10);
    if (end && *end == '\0') return v;
  }
  return 0;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

void validate_bank(const OrganModelBank& bank) {
  auto corrupt = [](const std::string& what) { fail(ErrorKind::CorruptModel, what); };
  if (bank.version != kBankVersion) {
    fail(ErrorKind::UnsupportedVersion, "unsupported bank version '" + bank.version + "'");
  }
  if (bank.organs.empty()) corrupt("bank holds no organ models");
  const auto& p = bank.pca;
  const auto d_in = p.mean.size();
  const auto d = p.components.rows();
  if (d == 0 || p.components.cols() != d_in || p.variances.size() != d) {
    corrupt("pca block dimensions are inconsistent");
  }
  if (!p.mean.allFinite() || !p.components.allFinite() || !p.variances.allFinite()) {
    corrupt("pca block holds non-finite values");
  }
  // Stored as float32, so orthonormality holds to single precision only.
  const Eigen::MatrixXd gram = p.components * p.components.transpose();
  if ((gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-4) {
    corrupt("pca components are not orthonormal");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (p.variances[i] < 0.0 || (i > 0 && p.variances[i] > p.variances[i - 1])) {
      corrupt("pca variances are negative or not sorted");
    }
  }
  for (const auto& [name, g] : bank.organs) {
    const auto k = g.weights.size();
    if (k == 0 || g.means.rows() != k || g.variances.rows() != k || g.means.cols() != d ||
        g.variances.cols() != d) {
      corrupt("gmm '" + name + "' dimensions are inconsistent");
    }
    if (!g.weights.allFinite() || !g.means.allFinite() || !g.variances.allFinite()) {
      corrupt("gmm '" + name + "' holds non-finite values");
    }
    if (g.weights.minCoeff() < 0.0 || std::abs(g.weights.sum() - 1.0) > 1e-6) {
      corrupt("gmm '" + name + "' weights do not sum to 1");
    }
    if (g.variances.minCoeff() < kVarianceFloor) {
      corrupt("gmm '" + name + "' has a variance below the floor");
    }
  }
}

TileDescriptors tile_descriptors(const GrayImage& image, const FeatureExtractor& extractor,
                                 const LayerSet& layers, std::size_t tile_size,
                                 std::size_t stride) {
  auto [img, upscaled] = ensure_min_side(image, tile_size);
  TileDescriptors out;
  out.grid = tile(img, tile_size, stride);
  out.upscaled = upscaled;
  out.height = img.height();
  out.width = img.width();
  for (std::size_t i = 0; i < out.grid.count(); ++i) {
    GrayImage patch = crop(img, out.grid.origins[i], tile_size, tile_size);
    if (tile_size != kTileSize) patch = resize_bilinear(patch, kTileSize, kTileSize);
    const auto desc = global_descriptor(extractor, patch, layers);
    if (desc.degenerate) log_warn("tile " + std::to_string(i) + " has an all-zero descriptor");
    if (i == 0) out.descriptors.resize(static_cast<Eigen::Index>(out.grid.count()), desc.values.size());
    out.descriptors.row(static_cast<Eigen::Index>(i)) = desc.values.transpose();
  }
  return out;
}

BankFitResult fit_bank(const std::vector<LabeledImage>& images,
                       const FeatureExtractor& extractor, const BankFitConfig& config) {
  if (images.empty()) fail(ErrorKind::InsufficientData, "no clean images to fit");

  std::map<std::string, std::vector<Eigen::VectorXd>> pooled;
  std::map<std::string, std::size_t> image_counts;
  for (const auto& li : images) {
    if (li.organ.empty()) fail(ErrorKind::Schema, "image '" + li.source + "' has no organ label");
    const auto td = tile_descriptors(li.image, extractor, config.layers, config.tile_size,
                                     config.stride);
    auto& rows = pooled[li.organ];
    for (Eigen::Index r = 0; r < td.descriptors.rows(); ++r) {
      rows.push_back(td.descriptors.row(r).transpose());
    }
    ++image_counts[li.organ];
  }

  BankFitResult result;
  std::vector<std::string> kept;
  for (const auto& [organ, rows] : pooled) {
    OrganFitReport rep;
    rep.organ = organ;
    rep.images = image_counts[organ];
    rep.patches = rows.size();
    if (rows.size() < config.components) {
      rep.excluded = true;
      rep.reason = "only " + std::to_string(rows.size()) + " patches for " +
                   std::to_string(config.components) + " components";
      log_warn("organ '" + organ + "' excluded: " + rep.reason);
    } else {
      kept.push_back(organ);
      result.pooled_patches += rows.size();
    }
    result.organs.push_back(rep);
  }
  if (kept.empty()) {
    std::string names;
    for (const auto& r : result.organs) names += (names.empty() ? "" : ", ") + r.organ;
    fail(ErrorKind::InsufficientData, "no organ has enough patches: " + names);
  }

  const auto dim = pooled.at(kept.front()).front().size();
  Eigen::MatrixXd pool(static_cast<Eigen::Index>(result.pooled_patches), dim);
  Eigen::Index row = 0;
  for (const auto& organ : kept) {
    for (const auto& v : pooled.at(organ)) pool.row(row++) = v.transpose();
  }

  OrganModelBank& bank = result.bank;
  bank.fingerprint = extractor.fingerprint();
  bank.layers = config.layers;
  bank.tile_size = config.tile_size;
  bank.stride = config.stride;
  bank.created = creation_time();
  {
    std::ostringstream cfg;
    cfg << "layers=" << config.layers.to_string() << ";d=" << config.pca_dim
        << ";K=" << config.components << ";seed=" << config.seed
        << ";tile=" << config.tile_size << "/" << config.stride
        << ";tol=" << config.gmm.tolerance << ";iter=" << config.gmm.max_iterations
        << ";restarts=" << config.gmm.restarts << ";floor=" << config.gmm.variance_floor;
    bank.config_hash = hash_string(cfg.str());
  }
  bank.pca = fit_pca(pool, config.pca_dim);

  row = 0;
  for (const auto& organ : kept) {
    const auto& rows = pooled.at(organ);
    const Eigen::MatrixXd projected =
        bank.pca.project_rows(pool.middleRows(row, static_cast<Eigen::Index>(rows.size())));
    row += static_cast<Eigen::Index>(rows.size());
    const auto salt = Fnv1a().update(organ).digest();
    GmmFit fit = fit_gmm(projected, config.components, derive_seed(config.seed, salt), config.gmm);
    for (auto& rep : result.organs) {
      if (rep.organ != organ) continue;
      rep.em_iterations = fit.iterations;
      rep.converged = fit.converged;
      rep.final_log_likelihood = fit.trace.back();
      rep.reseeds = fit.reseeds;
    }
    bank.organs.emplace(organ, std::move(fit.model));
  }
  canonicalize(bank);
  validate_bank(bank);
  return result;
}

std::size_t worst_count(std::size_t patches, double fraction) {
  const double x = fraction * static_cast<double>(patches);
  // Half away from zero; the slack absorbs representation error in fraction*n.
  const auto r = static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9 * std::max(1.0, x)));
  return std::max<std::size_t>(1, r);
}

WorstAggregate aggregate_worst(const std::vector<double>& scores, std::size_t kappa) {
  if (scores.empty()) fail(ErrorKind::InsufficientData, "no patch scores to aggregate");
  kappa = std::clamp<std::size_t>(kappa, 1, scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  WorstAggregate agg;
  agg.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kappa));
  double sum = 0.0;
  for (auto i : agg.indices) sum += scores[i];
  agg.mean = sum / static_cast<double>(kappa);
  return agg;
}

double patch_log_likelihood(const OrganModelBank& bank, const Eigen::VectorXd& projected,
                            const std::optional<std::string>& organ) {
  if (organ && !organ->empty()) {
    const auto it = bank.organs.find(*organ);
    if (it == bank.organs.end()) fail(ErrorKind::Lookup, "organ '" + *organ + "' not in bank");
    return log_density(it->second, projected);
  }
  std::vector<double> per_organ;
  per_organ.reserve(bank.organs.size());
  for (const auto& [name, g] : bank.organs) per_organ.push_back(log_density(g, projected));
  return log_sum_exp(per_organ) - std::log(static_cast<double>(per_organ.size()));
}

NrqResult nrq_score(const GrayImage& image, const OrganModelBank& bank,
                    const std::optional<std::string>& organ, const FeatureExtractor& extractor,
                    const NrqConfig& config) {
  if (organ && !organ->empty() && !bank.organs.contains(*organ)) {
    fail(ErrorKind::Lookup, "organ '" + *organ + "' not in bank");
  }
  if (extractor.fingerprint() != bank.fingerprint) {
    const std::string msg = "extractor fingerprint " + extractor.fingerprint() +
                            " does not match bank fingerprint " + bank.fingerprint;
    if (config.fingerprint_policy == FingerprintPolicy::Error) {
      fail(ErrorKind::FingerprintMismatch, msg);
    }
    log_warn(msg);
  }
  const auto td = tile_descriptors(image, extractor, bank.layers, bank.tile_size, bank.stride);
  const Eigen::MatrixXd projected = bank.pca.project_rows(td.descriptors);

  NrqResult res;
  res.origins = td.grid.origins;
  res.upscaled = td.upscaled;
  res.height = td.height;
  res.width = td.width;
  res.organ = organ.value_or("");
  res.patch_scores.resize(static_cast<std::size_t>(projected.rows()));
  for (Eigen::Index i = 0; i < projected.rows(); ++i) {
    res.patch_scores[static_cast<std::size_t>(i)] =
        patch_log_likelihood(bank, projected.row(i).transpose(), organ);
  }
  res.kappa = worst_count(res.patch_scores.size(), config.worst_fraction);
  auto agg = aggregate_worst(res.patch_scores, res.kappa);
  res.worst = std::move(agg.indices);
  res.score = agg.mean;
  return res;
}

}  // namespace usqm
