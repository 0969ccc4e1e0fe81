#include "usqm/image.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "usqm/errors.hpp"

namespace usqm {
namespace {

double clamp_unit(double v) {
  if (!std::isfinite(v)) return 0.0;
  return std::clamp(v, 0.0, 1.0);
}

void check_dims(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) fail(ErrorKind::Shape, "image dimensions must be positive");
}

std::string dims(const GrayImage& img) {
  std::ostringstream os;
  os << img.height() << "x" << img.width();
  return os.str();
}

}  // namespace

GrayImage::GrayImage(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width) {
  check_dims(height, width);
  data_.assign(height * width, clamp_unit(fill));
}

GrayImage::GrayImage(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_dims(height, width);
  if (data_.size() != height * width) {
    fail(ErrorKind::Shape, "pixel buffer length does not match dimensions");
  }
  for (double& v : data_) v = clamp_unit(v);
}

double mse(const GrayImage& a, const GrayImage& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::Shape, "mse: shape mismatch " + dims(a) + " vs " + dims(b));
  }
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pa.size());
}

double psnr(const GrayImage& a, const GrayImage& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrIdentical;
  return -10.0 * std::log10(e);
}

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t tile_size,
                                      std::size_t stride) {
  if (tile_size == 0 || stride == 0) {
    fail(ErrorKind::Range, "tile size and stride must be positive");
  }
  if (tile_size > extent) {
    fail(ErrorKind::Shape, "tile size " + std::to_string(tile_size) +
                               " exceeds image extent " + std::to_string(extent));
  }
  std::vector<std::size_t> out;
  for (std::size_t o = 0;; o += stride) {
    out.push_back(std::min(o, extent - tile_size));
    if (o + tile_size >= extent) break;
  }
  return out;
}

TileGrid tile(std::size_t height, std::size_t width, std::size_t tile_size,
              std::size_t stride) {
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.stride = stride;
  grid.row_origins = axis_origins(height, tile_size, stride);
  grid.col_origins = axis_origins(width, tile_size, stride);
  grid.origins.reserve(grid.row_origins.size() * grid.col_origins.size());
  for (auto r : grid.row_origins) {
    for (auto c : grid.col_origins) grid.origins.push_back({r, c});
  }
  return grid;
}

TileGrid tile(const GrayImage& img, std::size_t tile_size, std::size_t stride) {
  return tile(img.height(), img.width(), tile_size, stride);
}

GrayImage crop(const GrayImage& img, TileOrigin origin, std::size_t height,
               std::size_t width) {
  if (origin.row + height > img.height() || origin.col + width > img.width()) {
    fail(ErrorKind::Shape, "crop window exceeds image " + dims(img));
  }
  std::vector<double> out(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      out[r * width + c] = img(origin.row + r, origin.col + c);
    }
  }
  return GrayImage(height, width, std::move(out));
}

GrayImage resize_bilinear(const GrayImage& img, std::size_t out_h, std::size_t out_w) {
  check_dims(out_h, out_w);
  if (out_h == img.height() && out_w == img.width()) return img;

  const double sy = static_cast<double>(img.height()) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(out_w);
  const double max_y = static_cast<double>(img.height() - 1);
  const double max_x = static_cast<double>(img.width() - 1);

  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t n, double scale, double max_src) {
    std::vector<Tap> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, max_src);
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      const std::size_t i1 = std::min(i0 + 1, static_cast<std::size_t>(max_src));
      t[i] = {i0, i1, s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, sy, max_y);
  const auto tx = taps(out_w, sx, max_x);

  std::vector<double> out(out_h * out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const Tap& y = ty[r];
    for (std::size_t c = 0; c < out_w; ++c) {
      const Tap& x = tx[c];
      const double top = img(y.i0, x.i0) * (1.0 - x.w1) + img(y.i0, x.i1) * x.w1;
      const double bot = img(y.i1, x.i0) * (1.0 - x.w1) + img(y.i1, x.i1) * x.w1;
      out[r * out_w + c] = top * (1.0 - y.w1) + bot * y.w1;
    }
  }
  return GrayImage(out_h, out_w, std::move(out));
}

std::pair<GrayImage, bool> ensure_min_side(const GrayImage& img, std::size_t min_side) {
  const std::size_t short_side = std::min(img.height(), img.width());
  if (short_side >= min_side) return {img, false};
  const double f = static_cast<double>(min_side) / static_cast<double>(short_side);
  auto scaled = [&](std::size_t n) {
    if (n == short_side) return min_side;
    return std::max(min_side, static_cast<std::size_t>(std::lround(n * f)));
  };
  return {resize_bilinear(img, scaled(img.height()), scaled(img.width())), true};
}

std::vector<unsigned char> to_bytes(const GrayImage& img) {
  std::vector<unsigned char> out(img.size());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    out[i] = static_cast<unsigned char>(std::lround(px[i] * 255.0));
  }
  return out;
}

GrayImage from_bytes(std::size_t height, std::size_t width,
                     std::span<const unsigned char> bytes) {
  if (bytes.size() != height * width) {
    fail(ErrorKind::Shape, "byte buffer length does not match dimensions");
  }
  std::vector<double> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
  return GrayImage(height, width, std::move(data));
}

}  // namespace usqm
