#include "usqm/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "usqm/bank_store.hpp"
#include "usqm/errors.hpp"
#include "usqm/hashing.hpp"
#include "usqm/random.hpp"

namespace usqm {

// ---------------------------------------------------------------------------
// LayerSet

LayerSet::LayerSet(std::vector<int> layers) : layers_(std::move(layers)) {
  std::sort(layers_.begin(), layers_.end());
  layers_.erase(std::unique(layers_.begin(), layers_.end()), layers_.end());
}

std::string LayerSet::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers_.size(); ++i) os << (i ? "," : "") << layers_[i];
  return os.str();
}

LayerSet parse_layer_set(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::Range, "invalid layer index '" + item + "'");
    }
  }
  if (out.empty()) fail(ErrorKind::Range, "layer set is empty");
  return LayerSet(std::move(out));
}

const TokenMatrix& TokenFeatures::at(int layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == layer) return tokens[i];
  }
  fail(ErrorKind::Range, "layer " + std::to_string(layer) + " not present in features");
}

void FeatureExtractor::validate(const GrayImage& tile, const LayerSet& layers) const {
  if (tile.height() != kTileSize || tile.width() != kTileSize) {
    fail(ErrorKind::Shape, "extractor input must be 224x224, got " +
                               std::to_string(tile.height()) + "x" +
                               std::to_string(tile.width()));
  }
  if (layers.empty()) fail(ErrorKind::Range, "layer set is empty");
  for (int l : layers.indices()) {
    if (l < 0 || l >= profile().num_layers) {
      fail(ErrorKind::Range, "layer index " + std::to_string(l) + " outside [0, " +
                                 std::to_string(profile().num_layers) + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Built-in seeded encoder

namespace {

constexpr std::size_t kPatch = 16;
constexpr std::size_t kGrid = kTileSize / kPatch;  // 14
constexpr std::size_t kWidth = 64;
constexpr std::size_t kHeads = 4;
constexpr std::size_t kHeadDim = kWidth / kHeads;
constexpr std::size_t kHidden = 4 * kWidth;
constexpr int kDepth = 12;
constexpr double kLayerNormEps = 1e-6;
constexpr const char* kArchTag = "vit-p16-w64-h4-d12-prenorm-v1";

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

Mat random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

RowVec random_row(Rng& rng, std::size_t n, double mean, double stddev) {
  RowVec v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = mean + stddev * rng.normal();
  return v;
}

void layer_norm(const Mat& x, const RowVec& gamma, const RowVec& beta, Mat& out) {
  out.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    out.row(r) = ((x.row(r).array() - mean) * inv).matrix().cwiseProduct(gamma) + beta;
  }
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); }

}  // namespace

struct BuiltinExtractor::Weights {
  struct Block {
    RowVec ln1_g, ln1_b, ln2_g, ln2_b;
    Mat qkv;  // width x 3*width
    RowVec qkv_b;
    Mat proj;  // width x width
    RowVec proj_b;
    Mat fc1;  // width x hidden
    RowVec fc1_b;
    Mat fc2;  // hidden x width
    RowVec fc2_b;
  };

  Mat patch_embed;  // 256 x width
  RowVec patch_b;
  RowVec cls;
  Mat pos;  // (1 + T) x width
  std::vector<Block> blocks;

  explicit Weights(std::uint64_t seed) {
    Rng rng(seed);
    const double in_std = 1.0 / std::sqrt(static_cast<double>(kPatch * kPatch));
    const double w_std = 1.0 / std::sqrt(static_cast<double>(kWidth));
    const double h_std = 1.0 / std::sqrt(static_cast<double>(kHidden));
    patch_embed = random_matrix(rng, kPatch * kPatch, kWidth, in_std);
    patch_b = random_row(rng, kWidth, 0.0, 0.02);
    cls = random_row(rng, kWidth, 0.0, 0.02);
    pos = random_matrix(rng, 1 + kGrid * kGrid, kWidth, 0.02);
    blocks.resize(kDepth);
    for (auto& b : blocks) {
      b.ln1_g = random_row(rng, kWidth, 1.0, 0.1);
      b.ln1_b = random_row(rng, kWidth, 0.0, 0.02);
      b.qkv = random_matrix(rng, kWidth, 3 * kWidth, w_std);
      b.qkv_b = random_row(rng, 3 * kWidth, 0.0, 0.02);
      b.proj = random_matrix(rng, kWidth, kWidth, w_std);
      b.proj_b = random_row(rng, kWidth, 0.0, 0.02);
      b.ln2_g = random_row(rng, kWidth, 1.0, 0.1);
      b.ln2_b = random_row(rng, kWidth, 0.0, 0.02);
      b.fc1 = random_matrix(rng, kWidth, kHidden, w_std);
      b.fc1_b = random_row(rng, kHidden, 0.0, 0.02);
      b.fc2 = random_matrix(rng, kHidden, kWidth, h_std);
      b.fc2_b = random_row(rng, kWidth, 0.0, 0.02);
    }
  }
};

BuiltinExtractor::BuiltinExtractor(std::uint64_t seed)
    : seed_(seed), weights_(std::make_unique<const Weights>(seed)) {
  profile_.num_layers = kDepth;
  profile_.grid_side = kGrid;
  profile_.channels_per_layer.assign(kDepth, kWidth);
  profile_.has_class_token = true;
}

BuiltinExtractor::~BuiltinExtractor() = default;

std::string BuiltinExtractor::identity() const {
  return "builtin-seeded:" + std::to_string(seed_);
}

std::string BuiltinExtractor::fingerprint() const {
  Fnv1a h;
  h.update("builtin-seeded").update_u64(seed_).update(kArchTag);
  h.update_u64(static_cast<std::uint64_t>(profile_.num_layers)).update_u64(profile_.grid_side);
  for (auto c : profile_.channels_per_layer) h.update_u64(c);
  return h.hex();
}

TokenFeatures BuiltinExtractor::extract(const GrayImage& tile, const LayerSet& layers) const {
  validate(tile, layers);
  const Weights& w = *weights_;
  const std::size_t tokens = kGrid * kGrid;

  // Patchify with a fixed input normalization.
  Mat patches(tokens, kPatch * kPatch);
  for (std::size_t gy = 0; gy < kGrid; ++gy) {
    for (std::size_t gx = 0; gx < kGrid; ++gx) {
      const std::size_t t = gy * kGrid + gx;
      for (std::size_t py = 0; py < kPatch; ++py) {
        for (std::size_t px = 0; px < kPatch; ++px) {
          patches(t, py * kPatch + px) = (tile(gy * kPatch + py, gx * kPatch + px) - 0.5) / 0.25;
        }
      }
    }
  }

  Mat x(1 + tokens, kWidth);
  x.row(0) = w.cls;
  x.bottomRows(tokens) = (patches * w.patch_embed).rowwise() + w.patch_b;
  x += w.pos;

  TokenFeatures out;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
  Mat normed, qkv, attn_out(1 + tokens, kWidth), hidden;
  for (int l = 0; l <= layers.max(); ++l) {
    const auto& b = w.blocks[static_cast<std::size_t>(l)];

    layer_norm(x, b.ln1_g, b.ln1_b, normed);
    qkv.noalias() = normed * b.qkv;
    qkv.rowwise() += b.qkv_b;
    for (std::size_t h = 0; h < kHeads; ++h) {
      const auto q = qkv.middleCols(h * kHeadDim, kHeadDim);
      const auto k = qkv.middleCols(kWidth + h * kHeadDim, kHeadDim);
      const auto v = qkv.middleCols(2 * kWidth + h * kHeadDim, kHeadDim);
      Mat scores = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      attn_out.middleCols(h * kHeadDim, kHeadDim).noalias() = scores * v;
    }
    x.noalias() += attn_out * b.proj;
    x.rowwise() += b.proj_b;

    layer_norm(x, b.ln2_g, b.ln2_b, normed);
    hidden.noalias() = normed * b.fc1;
    hidden.rowwise() += b.fc1_b;
    hidden = hidden.unaryExpr(&gelu);
    x.noalias() += hidden * b.fc2;
    x.rowwise() += b.fc2_b;

    if (std::binary_search(layers.indices().begin(), layers.indices().end(), l)) {
      out.layers.push_back(l);
      out.tokens.push_back(x.bottomRows(tokens));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// External features

std::string tile_key(const GrayImage& tile) {
  Fnv1a h;
  h.update_u64(tile.height()).update_u64(tile.width());
  h.update(to_bytes(tile));
  return h.hex();
}

ExternalExtractor ExternalExtractor::load(const std::string& path) {
  auto records = read_feature_file(path);
  if (records.empty()) fail(ErrorKind::Schema, path + ": feature file holds no images");

  ExternalExtractor ext;
  ext.path_ = path;
  ext.content_hash_ = hash_file(path);

  int max_layer = -1;
  std::size_t tokens = 0;
  std::map<int, std::size_t> channels;
  for (auto& rec : records) {
    for (std::size_t i = 0; i < rec.features.layers.size(); ++i) {
      const int l = rec.features.layers[i];
      const auto& m = rec.features.tokens[i];
      max_layer = std::max(max_layer, l);
      if (tokens == 0) tokens = static_cast<std::size_t>(m.rows());
      if (static_cast<std::size_t>(m.rows()) != tokens) {
        fail(ErrorKind::Schema, path + ": inconsistent token counts across layers");
      }
      auto [it, inserted] = channels.emplace(l, static_cast<std::size_t>(m.cols()));
      if (!inserted && it->second != static_cast<std::size_t>(m.cols())) {
        fail(ErrorKind::Schema, path + ": inconsistent channel count for layer " +
                                    std::to_string(l));
      }
    }
    ext.records_[rec.image_id] = std::move(rec.features);
  }
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) {
    fail(ErrorKind::Schema, path + ": token count " + std::to_string(tokens) +
                                " is not a square grid");
  }
  ext.profile_.num_layers = max_layer + 1;
  ext.profile_.grid_side = side;
  ext.profile_.channels_per_layer.assign(static_cast<std::size_t>(max_layer + 1), 0);
  for (auto [l, c] : channels) ext.profile_.channels_per_layer[static_cast<std::size_t>(l)] = c;
  ext.profile_.has_class_token = false;
  return ext;
}

std::string ExternalExtractor::identity() const { return "external:" + path_; }

std::string ExternalExtractor::fingerprint() const {
  return Fnv1a().update("external").update(content_hash_).hex();
}

TokenFeatures ExternalExtractor::extract(const GrayImage& tile, const LayerSet& layers) const {
  validate(tile, layers);
  const std::string key = tile_key(tile);
  const auto it = records_.find(key);
  if (it == records_.end()) {
    fail(ErrorKind::Lookup, "no precomputed features for tile " + key + " in " + path_);
  }
  TokenFeatures out;
  for (int l : layers.indices()) {
    out.layers.push_back(l);
    out.tokens.push_back(it->second.at(l));
  }
  return out;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
  const std::string builtin = "builtin-seeded";
  if (spec == builtin) return std::make_unique<BuiltinExtractor>();
  if (spec.rfind(builtin + ":", 0) == 0) {
    const std::string s = spec.substr(builtin.size() + 1);
    try {
      std::size_t used = 0;
      const auto seed = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return std::make_unique<BuiltinExtractor>(seed);
    } catch (const std::exception&) {
      fail(ErrorKind::Range, "invalid extractor seed '" + s + "'");
    }
  }
  if (spec.rfind("external:", 0) == 0) {
    return std::make_unique<ExternalExtractor>(ExternalExtractor::load(spec.substr(9)));
  }
  fail(ErrorKind::Range, "unknown extractor '" + spec +
                             "' (expected builtin-seeded[:SEED] or external:PATH)");
}

// ---------------------------------------------------------------------------
// Descriptor

GlobalDescriptor pool_descriptor(const TokenFeatures& features) {
  std::size_t total = 0;
  for (const auto& m : features.tokens) total += static_cast<std::size_t>(m.cols());
  GlobalDescriptor d;
  d.layers = features.layers;
  d.values.resize(static_cast<Eigen::Index>(total));
  Eigen::Index offset = 0;
  for (const auto& m : features.tokens) {
    d.values.segment(offset, m.cols()) = m.colwise().mean().transpose();
    offset += m.cols();
  }
  const double norm = d.values.norm();
  if (norm == 0.0) {
    d.degenerate = true;
  } else {
    d.values /= norm;
  }
  return d;
}

GlobalDescriptor global_descriptor(const FeatureExtractor& extractor, const GrayImage& tile,
                                   const LayerSet& layers) {
  return pool_descriptor(extractor.extract(tile, layers));
}

}  // namespace usqm
