#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace usqm::detail {

/// Raw scalar field without the [0,1] clamp of GrayImage.
struct Field {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> v;

  Field() = default;
  Field(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), v(h * w, fill) {}
  double& at(std::size_t r, std::size_t c) { return v[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * width + c]; }
};

inline std::size_t reflect(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  if (m == 1) return 0;
  const long period = 2 * (m - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - i);
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[i + radius] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

/// Separable Gaussian blur with reflected borders. sigma <= 0 is a no-op.
inline Field blur(const Field& in, double sigma) {
  if (sigma <= 0.0) return in;
  const auto k = gaussian_kernel(sigma);
  const long radius = static_cast<long>(k.size() / 2);
  Field tmp(in.height, in.width);
  for (std::size_t r = 0; r < in.height; ++r) {
    for (std::size_t c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (long j = -radius; j <= radius; ++j) {
        acc += k[j + radius] * in.at(r, reflect(static_cast<long>(c) + j, in.width));
      }
      tmp.at(r, c) = acc;
    }
  }
  Field out(in.height, in.width);
  for (std::size_t r = 0; r < in.height; ++r) {
    for (std::size_t c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (long j = -radius; j <= radius; ++j) {
        acc += k[j + radius] * tmp.at(reflect(static_cast<long>(r) + j, in.height), c);
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

/// Bilinear sample at fractional (y, x) with edge clamping.
inline double sample_bilinear(const Field& f, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(f.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(f.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, f.height - 1);
  const std::size_t x1 = std::min(x0 + 1, f.width - 1);
  const double wy = y - static_cast<double>(y0);
  const double wx = x - static_cast<double>(x0);
  const double top = f.at(y0, x0) * (1 - wx) + f.at(y0, x1) * wx;
  const double bot = f.at(y1, x0) * (1 - wx) + f.at(y1, x1) * wx;
  return top * (1 - wy) + bot * wy;
}

}  // namespace usqm::detail
