#include "usqm/phantom.hpp"

#include <cmath>
#include <numbers>

#include "filters.hpp"
#include "usqm/errors.hpp"
#include "usqm/random.hpp"

namespace usqm {

PhantomStyle phantom_style(const std::string& name) {
  if (name == "thyroid") return {1.0, 0.50, 0.55, 3, 0.4, 0.4};
  if (name == "kidney") return {2.2, 0.35, 0.70, 2, 0.7, 0.6};
  if (name == "liver") return {1.5, 0.42, 0.35, 4, 0.6, 0.5};
  if (name == "breast") return {1.8, 0.55, 0.60, 2, 0.5, 0.3};
  fail(ErrorKind::Lookup, "unknown phantom style: " + name);
}

GrayImage make_phantom(std::size_t height, std::size_t width, std::uint64_t seed,
                       const PhantomStyle& style) {
  using detail::Field;
  Rng rng(seed);
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);

  // Slowly varying echogenicity.
  Field echo(height, width);
  for (double& v : echo.v) v = rng.normal();
  echo = detail::blur(echo, std::max(h, w) / 12.0);
  double peak = 1e-12;
  for (double v : echo.v) peak = std::max(peak, std::abs(v));
  for (double& v : echo.v) v = style.brightness * (1.0 + 0.25 * v / peak);

  for (int k = 0; k < style.inclusions; ++k) {
    const double cy = rng.uniform(0.15, 0.85) * h;
    const double cx = rng.uniform(0.15, 0.85) * w;
    const double ay = rng.uniform(0.06, 0.16) * h;
    const double ax = rng.uniform(0.06, 0.16) * w;
    const double gain = (rng.uniform() < 0.5 ? -1.0 : 1.0) * style.inclusion_contrast;
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double dy = (static_cast<double>(r) - cy) / ay;
        const double dx = (static_cast<double>(c) - cx) / ax;
        const double rho = std::sqrt(dy * dy + dx * dx);
        const double m = 1.0 / (1.0 + std::exp((rho - 1.0) * 12.0));
        echo.at(r, c) *= 1.0 + gain * m;
      }
    }
  }

  // Rayleigh speckle from a correlated complex Gaussian field.
  Field re(height, width), im(height, width);
  for (double& v : re.v) v = rng.normal();
  for (double& v : im.v) v = rng.normal();
  re = detail::blur(re, style.speckle_sigma);
  im = detail::blur(im, style.speckle_sigma);
  Field env(height, width);
  double mean_env = 0.0;
  for (std::size_t i = 0; i < env.v.size(); ++i) {
    env.v[i] = std::hypot(re.v[i], im.v[i]);
    mean_env += env.v[i];
  }
  mean_env /= static_cast<double>(env.v.size());

  std::vector<double> out(height * width);
  const double lc = style.log_compression;
  for (std::size_t r = 0; r < height; ++r) {
    const double depth = 1.0 - style.attenuation * static_cast<double>(r) / h;
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      const double s = env.v[i] / mean_env;
      // Blend between linear and log-compressed envelope.
      const double compressed = std::log1p(4.0 * s) / std::log1p(4.0);
      const double speckle = (1.0 - lc) * s + lc * compressed;
      out[i] = echo.v[i] * depth * speckle;
    }
  }
  return GrayImage(height, width, std::move(out));
}

}  // namespace usqm
