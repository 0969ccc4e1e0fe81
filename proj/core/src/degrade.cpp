#include "usqm/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "filters.hpp"
#include "usqm/errors.hpp"
#include "usqm/random.hpp"

namespace usqm {
namespace {

using detail::Field;

const std::vector<DistortionInfo> kRegistry = {
    {DistortionKind::AdditiveGaussian, "additive-gaussian", DistortionGroup::NoiseTexture, 0.0, 0.5, true},
    {DistortionKind::Speckle, "speckle", DistortionGroup::NoiseTexture, 0.0, 2.0, true},
    {DistortionKind::GaussianBlur, "gaussian-blur", DistortionGroup::BlurResolution, 0.0, 8.0, true},
    {DistortionKind::Downsample, "downsample", DistortionGroup::BlurResolution, 1.0, 16.0, true},
    {DistortionKind::RoiShadow, "roi-shadow", DistortionGroup::UltrasoundArtifact, 0.0, 1.0, true},
    {DistortionKind::SpecularClip, "specular-clip", DistortionGroup::UltrasoundArtifact, 0.0, 1.0, true},
    {DistortionKind::ScanlineMissing, "scanline-missing", DistortionGroup::UltrasoundArtifact, 0.0, 0.5, true},
    {DistortionKind::Elastic, "elastic", DistortionGroup::Geometric, 0.0, 12.0, true},
    {DistortionKind::ClutterHaze, "clutter-haze", DistortionGroup::UltrasoundArtifact, 0.0, 1.0, false},
};

Field to_field(const GrayImage& img) {
  Field f(img.height(), img.width());
  std::copy(img.pixels().begin(), img.pixels().end(), f.v.begin());
  return f;
}

GrayImage to_image(Field f) { return GrayImage(f.height, f.width, std::move(f.v)); }

// Each kind draws from its own stream so that one seed can drive several kinds.
Rng stream(const DegradationSpec& spec) {
  return Rng(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.kind) + 101));
}

Field normal_field(Rng& rng, std::size_t h, std::size_t w) {
  Field f(h, w);
  for (double& v : f.v) v = rng.normal();
  return f;
}

// Smooth random field scaled so its largest magnitude is 1.
Field smooth_field(Rng& rng, std::size_t h, std::size_t w, double sigma) {
  Field f = detail::blur(normal_field(rng, h, w), sigma);
  double peak = 0.0;
  for (double v : f.v) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : f.v) v /= peak;
  }
  return f;
}

// Replaces every (2^level)x(2^level) cell by its mean; edge cells may be partial.
std::vector<double> block_means(const GrayImage& img, int level) {
  const std::size_t h = img.height(), w = img.width();
  const std::size_t cell = std::size_t{1} << level;
  const std::size_t ch = (h + cell - 1) / cell, cw = (w + cell - 1) / cell;
  std::vector<double> sum(ch * cw, 0.0), count(ch * cw, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t c = (y / cell) * cw + x / cell;
      sum[c] += img(y, x);
      count[c] += 1.0;
    }
  }
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t c = (y / cell) * cw + x / cell;
      out[y * w + x] = sum[c] / count[c];
    }
  }
  return out;
}

GrayImage downsample(const GrayImage& img, double factor) {
  // Dyadic cells are nested, so the residual of a blend between two adjacent
  // levels grows monotonically with the blend weight.
  const int level = std::min(3, static_cast<int>(std::floor(std::log2(factor))));
  const double base = std::ldexp(1.0, level);
  const double alpha = std::clamp((factor - base) / base, 0.0, 1.0);
  const auto lo = block_means(img, level);
  if (alpha == 0.0) return GrayImage(img.height(), img.width(), lo);
  const auto hi = block_means(img, level + 1);
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - alpha) * lo[i] + alpha * hi[i];
  return GrayImage(img.height(), img.width(), std::move(out));
}

GrayImage roi_shadow(const GrayImage& img, const DegradationSpec& spec) {
  Rng rng = stream(spec);
  const double h = static_cast<double>(img.height());
  const double w = static_cast<double>(img.width());
  const double cy = rng.uniform(0.3, 0.7) * h;
  const double cx = rng.uniform(0.3, 0.7) * w;
  const double ay = spec.shadow_axis_y * h;
  const double ax = spec.shadow_axis_x * w;
  const double falloff = std::max(spec.shadow_falloff, 1e-6);
  std::vector<double> out(img.size());
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      const double dy = (static_cast<double>(r) + 0.5 - cy) / ay;
      const double dx = (static_cast<double>(c) + 0.5 - cx) / ax;
      const double rho = std::sqrt(dy * dy + dx * dx);
      double m = 0.0;
      if (rho <= 1.0) {
        m = 1.0;
      } else if (rho < 1.0 + falloff) {
        m = 0.5 * (1.0 + std::cos(std::numbers::pi * (rho - 1.0) / falloff));
      }
      out[r * img.width() + c] = img(r, c) * (1.0 - spec.theta * m);
    }
  }
  return GrayImage(img.height(), img.width(), std::move(out));
}

GrayImage scanline_missing(const GrayImage& img, const DegradationSpec& spec) {
  Rng rng = stream(spec);
  std::vector<std::size_t> cols(img.width());
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  for (std::size_t i = cols.size(); i > 1; --i) {
    std::swap(cols[i - 1], cols[rng.below(i)]);
  }
  // Whole columns are dropped; the next one is attenuated by the remainder so
  // damage grows continuously with theta.
  const double count = spec.theta * static_cast<double>(img.width());
  const auto full = std::min(img.width(), static_cast<std::size_t>(std::floor(count + 1e-9)));
  const double remainder = std::max(0.0, count - static_cast<double>(full));
  std::vector<double> gain(img.width(), 1.0);
  for (std::size_t i = 0; i < full; ++i) gain[cols[i]] = 0.0;
  if (full < img.width() && remainder > 1e-9) gain[cols[full]] = 1.0 - remainder;
  std::vector<double> out(img.pixels().begin(), img.pixels().end());
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) out[r * img.width() + c] *= gain[c];
  }
  return GrayImage(img.height(), img.width(), std::move(out));
}

GrayImage elastic(const GrayImage& img, const DegradationSpec& spec) {
  Rng rng = stream(spec);
  constexpr double sigma = 8.0;  // pixels, independent of image size
  const Field dy = smooth_field(rng, img.height(), img.width(), sigma);
  const Field dx = smooth_field(rng, img.height(), img.width(), sigma);
  const Field src = to_field(img);
  std::vector<double> out(img.size());
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      out[r * img.width() + c] =
          detail::sample_bilinear(src, static_cast<double>(r) + spec.theta * dy.at(r, c),
                                  static_cast<double>(c) + spec.theta * dx.at(r, c));
    }
  }
  return GrayImage(img.height(), img.width(), std::move(out));
}

GrayImage clutter_haze(const GrayImage& img, const DegradationSpec& spec) {
  Rng rng = stream(spec);
  const double sigma = static_cast<double>(std::min(img.height(), img.width())) / 8.0;
  Field haze = smooth_field(rng, img.height(), img.width(), sigma);
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = img.pixels()[i] + spec.theta * 0.5 * (haze.v[i] + 1.0);
  }
  return GrayImage(img.height(), img.width(), std::move(out));
}

std::string format_range(const DistortionInfo& info) {
  std::ostringstream os;
  os << "[" << info.theta_min << ", " << info.theta_max << "]";
  return os.str();
}

}  // namespace

const std::vector<DistortionInfo>& distortion_registry() { return kRegistry; }

const DistortionInfo& distortion_info(DistortionKind kind) {
  for (const auto& d : kRegistry) {
    if (d.kind == kind) return d;
  }
  fail(ErrorKind::Lookup, "unregistered distortion kind");
}

std::vector<DistortionKind> default_distortions() {
  std::vector<DistortionKind> out;
  for (const auto& d : kRegistry) {
    if (d.in_default_suite) out.push_back(d.kind);
  }
  return out;
}

DistortionKind parse_distortion(const std::string& name) {
  for (const auto& d : kRegistry) {
    if (name == d.name) return d.kind;
  }
  fail(ErrorKind::Lookup, "unknown distortion kind '" + name + "'");
}

const char* to_string(DistortionKind kind) { return distortion_info(kind).name; }

const char* to_string(DistortionGroup group) {
  switch (group) {
    case DistortionGroup::NoiseTexture: return "noise-texture";
    case DistortionGroup::BlurResolution: return "blur-resolution";
    case DistortionGroup::UltrasoundArtifact: return "ultrasound-artifact";
    case DistortionGroup::Geometric: return "geometric";
  }
  return "unknown";
}

GrayImage apply(const GrayImage& img, const DegradationSpec& spec) {
  const auto& info = distortion_info(spec.kind);
  if (!std::isfinite(spec.theta) || spec.theta < info.theta_min || spec.theta > info.theta_max) {
    std::ostringstream os;
    os << info.name << ": severity " << spec.theta << " outside " << format_range(info);
    fail(ErrorKind::Range, os.str());
  }
  if (spec.theta == info.theta_min) return img;

  switch (spec.kind) {
    case DistortionKind::AdditiveGaussian:
    case DistortionKind::Speckle: {
      Rng rng = stream(spec);
      std::vector<double> out(img.size());
      const bool multiplicative = spec.kind == DistortionKind::Speckle;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = img.pixels()[i];
        const double e = spec.theta * rng.normal();
        out[i] = multiplicative ? x * (1.0 + e) : x + e;
      }
      return GrayImage(img.height(), img.width(), std::move(out));
    }
    case DistortionKind::GaussianBlur:
      return to_image(detail::blur(to_field(img), spec.theta));
    case DistortionKind::Downsample:
      return downsample(img, spec.theta);
    case DistortionKind::RoiShadow:
      return roi_shadow(img, spec);
    case DistortionKind::SpecularClip: {
      std::vector<double> out(img.pixels().begin(), img.pixels().end());
      const double threshold = 1.0 - spec.theta;
      for (double& v : out) {
        if (v >= threshold) v = 1.0;
      }
      return GrayImage(img.height(), img.width(), std::move(out));
    }
    case DistortionKind::ScanlineMissing:
      return scanline_missing(img, spec);
    case DistortionKind::Elastic:
      return elastic(img, spec);
    case DistortionKind::ClutterHaze:
      return clutter_haze(img, spec);
  }
  fail(ErrorKind::InternalBug, "unhandled distortion kind");
}

Calibration calibrate_to_psnr(const GrayImage& img, DistortionKind kind, std::uint64_t seed,
                              const PsnrTarget& target) {
  const auto& info = distortion_info(kind);
  if (!std::isfinite(target.target_db)) {
    fail(ErrorKind::Range, "PSNR target must be finite");
  }
  if (!(target.tolerance_db > 0.0)) fail(ErrorKind::Range, "PSNR tolerance must be > 0");

  DegradationSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  auto probe = [&](double theta) {
    spec.theta = theta;
    GrayImage out = apply(img, spec);
    const double p = psnr(img, out);
    return std::pair{std::move(out), p};
  };

  auto [hi_img, hi_psnr] = probe(info.theta_max);
  if (hi_psnr > target.target_db) {
    std::ostringstream os;
    os << info.name << ": target " << target.target_db << " dB unreachable; achievable range is ["
       << hi_psnr << " dB, +inf) over theta " << format_range(info);
    fail(ErrorKind::Range, os.str());
  }

  Calibration best{info.theta_max, hi_psnr, 0, false, std::move(hi_img)};
  if (std::abs(hi_psnr - target.target_db) <= target.tolerance_db) {
    best.converged = true;
    return best;
  }
  double lo = info.theta_min;
  double hi = info.theta_max;
  for (int it = 1; it <= target.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto [out, p] = probe(mid);
    const double err = std::abs(p - target.target_db);
    if (err < std::abs(best.achieved_psnr - target.target_db)) {
      best = {mid, p, it, false, std::move(out)};
    }
    best.iterations = it;
    if (err <= target.tolerance_db) {
      best.converged = true;
      return best;
    }
    if (p > target.target_db) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return best;
}

std::vector<SweepStep> severity_sweep(const GrayImage& img, DistortionKind kind,
                                      std::uint64_t seed, std::size_t n) {
  if (n < 2) fail(ErrorKind::Range, "severity sweep needs at least 2 steps");
  const auto& info = distortion_info(kind);
  std::vector<SweepStep> steps;
  steps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    DegradationSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    spec.theta = i + 1 == n ? info.theta_max : info.theta_min + t * (info.theta_max - info.theta_min);
    GrayImage out = apply(img, spec);
    const double p = psnr(img, out);
    if (!steps.empty() && p > steps.back().psnr) {
      std::ostringstream os;
      os << info.name << ": PSNR rose from " << steps.back().psnr << " to " << p
         << " dB between theta " << steps.back().theta << " and " << spec.theta
         << " (distortion is not monotone)";
      fail(ErrorKind::InternalBug, os.str());
    }
    steps.push_back({spec.theta, p, std::move(out)});
  }
  return steps;
}

}  // namespace usqm
